#include "btbrecon/gadget.hpp"

#include <sstream>
#include <stdexcept>

namespace btbrecon {

namespace {

std::string join(const std::vector<std::string>& items)
{
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) out += "; ";
        out += item;
    }
    return out;
}

std::vector<std::string> stride_violations(const GadgetSpec& spec)
{
    std::vector<std::string> violations;
    if (spec.branch_count < 1)
        violations.emplace_back("branch count must be >= 1");
    if (!is_power_of_two(spec.stride))
        violations.emplace_back("stride not power of two");
    if (spec.stride < kMinStride)
        violations.emplace_back("stride below 8 bytes (no room for adr+br)");
    return violations;
}

} // namespace

std::vector<std::string> validate_spec(const GadgetSpec& spec)
{
    auto violations = stride_violations(spec);
    if (spec.alignment_exponent >= 64 ||
        (spec.base_address & ((std::uint64_t{1} << spec.alignment_exponent) - 1)) != 0) {
        violations.emplace_back("base not aligned to 2^" + std::to_string(spec.alignment_exponent));
    }
    return violations;
}

std::vector<Address> build_trace(const GadgetSpec& spec)
{
    if (const auto violations = validate_spec(spec); !violations.empty())
        throw std::invalid_argument("invalid gadget spec: " + join(violations));

    std::vector<Address> trace;
    trace.reserve(spec.branch_count);
    for (std::uint64_t k = 0; k < spec.branch_count; ++k)
        trace.push_back(spec.base_address + k * spec.stride + kBranchOffset);
    return trace;
}

std::string emit_asm(const GadgetSpec& spec, const EmitOptions& options)
{
    // Placement is the loader's job, so the base address is not checked here.
    if (const auto violations = stride_violations(spec); !violations.empty())
        throw std::invalid_argument("invalid gadget spec: " + join(violations));
    if (spec.stride > kMaxFarStride)
        throw std::invalid_argument("stride exceeds 2^23 bytes; next block is out of reach");

    const std::uint64_t n = spec.stride;
    const unsigned align = log2_floor(n);
    const bool far = n > kMaxAdrStride;
    const bool write_nops = n <= options.explicit_nop_limit;
    const std::string& sym = options.symbol;

    std::ostringstream os;
    os << "# btb-recon: B=" << spec.branch_count << " N=" << n << "\n";
    os << "// Probe gadget: " << spec.branch_count << " indirect jumps spaced " << n
       << " bytes apart, footprint " << spec.footprint() << " bytes.\n";
    if (far) {
        os << "// Far form: x0 must hold the entry address on entry (pass it as the first\n"
              "// argument). Each block does 'add x0, x0, #" << (n >> 12)
           << ", lsl #12' and jumps through x0 at offset +4.\n";
    } else {
        os << "// Each block does 'adr x0, nextK' and jumps through x0 at offset +4.\n";
    }
    if (!write_nops)
        os << "// Block padding is generated by .p2align " << align << " (nop fill).\n";

    os << "\t.text\n";
    os << "\t.global " << sym << "\n";
    os << "\t.type " << sym << ", %function\n";
    os << "\t.p2align " << align << "\n";
    os << sym << ":\n";

    const std::uint64_t pad_nops = n / 4 - 2;
    for (std::uint64_t k = 0; k < spec.branch_count; ++k) {
        if (k > 0) {
            os << "\t.p2align " << align << "\n";
            os << "next" << k << ":\n";
        }
        if (far)
            os << "\tadd x0, x0, #" << (n >> 12) << ", lsl #12\n";
        else
            os << "\tadr x0, next" << (k + 1) << "\n";
        os << "\tbr x0\n";
        if (write_nops)
            for (std::uint64_t i = 0; i < pad_nops; ++i) os << "\tnop\n";
    }
    os << "\t.p2align " << align << "\n";
    os << "next" << spec.branch_count << ":\n";
    os << "\tret\n";
    os << "\t.size " << sym << ", .-" << sym << "\n";
    return os.str();
}

} // namespace btbrecon
