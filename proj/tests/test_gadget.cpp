#include "btbrecon/gadget.hpp"
#include "oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

using namespace btbrecon;

namespace {

const char* const kListingSnapshot = R"(# btb-recon: B=3 N=16
// Probe gadget: 3 indirect jumps spaced 16 bytes apart, footprint 52 bytes.
// Each block does 'adr x0, nextK' and jumps through x0 at offset +4.
	.text
	.global btb_gadget
	.type btb_gadget, %function
	.p2align 4
btb_gadget:
	adr x0, next1
	br x0
	nop
	nop
	.p2align 4
next1:
	adr x0, next2
	br x0
	nop
	nop
	.p2align 4
next2:
	adr x0, next3
	br x0
	nop
	nop
	.p2align 4
next3:
	ret
	.size btb_gadget, .-btb_gadget
)";

bool has(const std::vector<std::string>& v, const std::string& s)
{
    return std::find(v.begin(), v.end(), s) != v.end();
}

} // namespace

TEST(BuildTrace, Examples)
{
    EXPECT_EQ(build_trace({3, 16, 0x400000, 0}), (std::vector<Address>{0x400004, 0x400014, 0x400024}));
    EXPECT_EQ(build_trace({1, 8, 0x0}), (std::vector<Address>{0x4}));
    EXPECT_EQ(build_trace({2, 1u << 17, 0x40000000}), (std::vector<Address>{0x40000004, 0x40020004}));
}

TEST(BuildTrace, RejectsInvalidSpecs)
{
    EXPECT_THROW(build_trace({8, 24, 0}), std::invalid_argument);
    EXPECT_THROW(build_trace({8, 4, 0}), std::invalid_argument);
    EXPECT_THROW(build_trace({0, 16, 0}), std::invalid_argument);
    EXPECT_THROW(build_trace({8, 8, 0x1000}), std::invalid_argument);
}

TEST(BuildTrace, StrictlyIncreasingWithFixedLowBits)
{
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const unsigned j = 3 + rng() % 19;
        const GadgetSpec spec{1 + rng() % 200, std::uint64_t{1} << j, kDefaultSimulationBase};
        const auto t = build_trace(spec);
        ASSERT_EQ(t.size(), spec.branch_count);
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (k) ASSERT_LT(t[k - 1], t[k]);
            // low j bits are identical (= 4) for every branch
            ASSERT_EQ(t[k] & (spec.stride - 1), 4u);
        }
    }
}

TEST(ValidateSpec, Examples)
{
    EXPECT_TRUE(has(validate_spec({8, 24, 0}), "stride not power of two"));
    auto v = validate_spec({8, 8, 0x1000});
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].rfind("base not aligned", 0), 0u);
    EXPECT_TRUE(validate_spec({8, 64, 0}).empty());
    EXPECT_EQ(validate_spec({0, 4, 0x10}).size(), 3u);
}

TEST(EmitAsm, ListingSnapshot)
{
    EXPECT_EQ(emit_asm({3, 16}), kListingSnapshot);
    const auto layout = oracle::parse_asm(emit_asm({3, 16}));
    EXPECT_EQ(layout.mnemonics, (std::vector<std::string>{"adr", "br", "nop", "nop", "adr", "br", "nop", "nop", "adr",
                                                          "br", "nop", "nop", "ret"}));
    EXPECT_EQ(layout.labels.at("next1"), 16u);
    EXPECT_EQ(layout.labels.at("next2"), 32u);
    EXPECT_EQ(layout.end, 52u);
}

TEST(EmitAsm, MinimalGadget)
{
    const auto layout = oracle::parse_asm(emit_asm({1, 8}));
    EXPECT_EQ(layout.mnemonics, (std::vector<std::string>{"adr", "br", "ret"}));
    EXPECT_EQ(layout.end, 12u);
}

TEST(EmitAsm, HeaderRecordsParameters)
{
    const auto text = emit_asm({40, 1024});
    EXPECT_EQ(text.rfind("# btb-recon: B=40 N=1024\n", 0), 0u);
}

TEST(EmitAsm, RandomSpecsHaveExactLayout)
{
    std::mt19937_64 rng(50);
    for (int i = 0; i < 50; ++i) {
        const std::uint64_t n = std::uint64_t{1} << (3 + rng() % 21);
        const std::uint64_t b = 1 + rng() % 64;
        const auto text = emit_asm({b, n});
        const auto layout = oracle::parse_asm(text);
        ASSERT_EQ(layout.branch_offsets.size(), b) << "B=" << b << " N=" << n;
        ASSERT_EQ(layout.return_offsets.size(), 1u);
        for (std::uint64_t k = 0; k < b; ++k) {
            ASSERT_EQ(layout.branch_offsets[k], k * n + kBranchOffset);
            if (k) ASSERT_EQ(layout.labels.at("next" + std::to_string(k)), k * n);
        }
        ASSERT_EQ(layout.return_offsets[0], b * n);
        ASSERT_EQ(layout.end, b * n + 4);
        ASSERT_EQ(layout.end, GadgetSpec({b, n}).footprint());
    }
}

TEST(EmitAsm, NopsWrittenOutUpToTheLimit)
{
    const auto layout = oracle::parse_asm(emit_asm({2, 256}));
    EXPECT_EQ(std::count(layout.mnemonics.begin(), layout.mnemonics.end(), "nop"), 2 * (256 / 4 - 2));
    const auto big = oracle::parse_asm(emit_asm({2, 512}));
    EXPECT_EQ(std::count(big.mnemonics.begin(), big.mnemonics.end(), "nop"), 0);
    EXPECT_EQ(big.end, 2u * 512 + 4);
}

TEST(EmitAsm, FarFormAboveAdrReach)
{
    const std::uint64_t n = std::uint64_t{1} << 20;
    const auto text = emit_asm({3, n});
    EXPECT_EQ(text.find("adr "), std::string::npos);
    EXPECT_NE(text.find("\tadd x0, x0, #256, lsl #12\n"), std::string::npos);
    EXPECT_EQ(oracle::parse_asm(text).branch_offsets, (std::vector<std::uint64_t>{4, n + 4, 2 * n + 4}));
    EXPECT_THROW(emit_asm({1, std::uint64_t{1} << 24}), std::invalid_argument);
}

TEST(EmitAsm, ErrorsAndDeterminism)
{
    EXPECT_THROW(emit_asm({1, 4}), std::invalid_argument);
    EXPECT_THROW(emit_asm({1, 12}), std::invalid_argument);
    EXPECT_THROW(emit_asm({0, 16}), std::invalid_argument);
    EXPECT_EQ(emit_asm({17, 64}), emit_asm({17, 64}));
    EmitOptions opts;
    opts.symbol = "probe";
    EXPECT_NE(emit_asm({2, 16}, opts).find("\t.global probe\n"), std::string::npos);
}

TEST(EmitAsm, AssemblesToExpectedSectionSize)
{
    if (std::system("clang --target=aarch64-linux-gnu --version >/dev/null 2>&1") != 0 ||
        std::system("readelf --version >/dev/null 2>&1") != 0)
        GTEST_SKIP() << "no aarch64 assembler available";
    const auto dir = std::filesystem::temp_directory_path() / ("btbrecon_asm_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    for (auto [b, n] : {std::pair<std::uint64_t, std::uint64_t>{3, 16}, {5, 1024}, {2, 1u << 20}}) {
        const auto src = dir / "g.S", obj = dir / "g.o", sizes = dir / "size.txt";
        std::ofstream(src) << emit_asm({b, n});
        const std::string as = "clang --target=aarch64-linux-gnu -c " + src.string() + " -o " + obj.string();
        ASSERT_EQ(std::system(as.c_str()), 0);
        const std::string re = "readelf -S -W " + obj.string() + " | awk '{for(i=1;i<NF;i++) if($i==\".text\") print $(i+4)}' > " + sizes.string();
        ASSERT_EQ(std::system(re.c_str()), 0);
        std::string hex;
        std::ifstream(sizes) >> hex;
        EXPECT_EQ(std::stoull(hex, nullptr, 16), b * n + 4) << "B=" << b << " N=" << n;
    }
    std::filesystem::remove_all(dir);
}
