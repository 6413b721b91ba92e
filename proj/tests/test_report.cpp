#include "btbrecon/report.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

using namespace btbrecon;

namespace {

const BtbGeometry k2048x2 = BtbGeometry::from_sets(2048, 2, 4);

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

MissMatrix filled(const SweepGrid& grid, double rate)
{
    MissMatrix m(grid);
    for (std::size_t bi = 0; bi < grid.b_values.size(); ++bi)
        for (std::size_t ni = 0; ni < grid.n_values.size(); ++ni) m.set(bi, ni, MatrixCell{rate, std::nullopt});
    return m;
}

// glyphs of one rendered B row
std::string row_glyphs(const std::string& line)
{
    std::string g;
    const auto bar = line.find('|');
    for (std::size_t i = bar + 3; i < line.size(); i += 3) g += line[i];
    return g;
}

} // namespace

TEST(ExportCsv, OneByOne)
{
    MissMatrix m(SweepGrid{{1}, {8}});
    m.set(0, 0, MatrixCell{0.0, 0});
    EXPECT_EQ(export_matrix(m, MatrixFormat::Csv), "B,8\n1,0.0\n");
}

TEST(ExportCsv, CapacityPresetShape)
{
    const auto m = run_sweep(SimulatorBackend{k2048x2}, SweepGrid::capacity_preset());
    const auto ls = lines(export_matrix(m, MatrixFormat::Csv));
    ASSERT_EQ(ls.size(), 9u);
    for (const auto& l : ls) EXPECT_EQ(std::count(l.begin(), l.end(), ','), 8);
    EXPECT_EQ(ls[0], "B,8,16,32,64,128,256,512,1024");
    // N=8: 512 of 2048 sets hold 4 branches -> 2048/5120
    EXPECT_EQ(ls[5].substr(0, 13), "5120,0.4,0.6,");
}

TEST(ExportCsv, TwelveSignificantDigitsAndMissingCells)
{
    MissMatrix m(SweepGrid{{3, 7}, {8, 16}});
    m.set(0, 0, MatrixCell{1.0 / 3.0, 1});
    m.set(1, 1, MatrixCell{1.013, std::nullopt});
    const auto ls = lines(export_matrix(m, MatrixFormat::Csv));
    EXPECT_EQ(ls[1], "3,0.333333333333,");
    EXPECT_EQ(ls[2], "7,,1.013");
    EXPECT_NEAR(std::stod("0.333333333333"), 1.0 / 3.0, 1e-12);
}

TEST(FormatRate, LocaleFreeShortest)
{
    EXPECT_EQ(format_rate(0.0), "0.0");
    EXPECT_EQ(format_rate(1.0), "1.0");
    EXPECT_EQ(format_rate(0.6), "0.6");
    EXPECT_EQ(format_rate(0.169921875), "0.169921875");
}

TEST(ExportJson, RoundTripIsBitIdentical)
{
    auto m = merge({run_sweep(SimulatorBackend{k2048x2, NoiseModel::poisson(0.01, 4)}, SweepGrid::capacity_preset()),
                    run_sweep(SimulatorBackend{k2048x2, NoiseModel::poisson(0.01, 4)}, SweepGrid::set_index_preset())});
    m.metadata.timestamp = "2024-01-01T00:00:00Z";
    m.metadata.notes.push_back("x");
    const auto back = import_matrix_json(export_matrix(m, MatrixFormat::Json));
    EXPECT_EQ(back, m);
    for (std::size_t bi = 0; bi < m.b_values().size(); ++bi)
        for (std::size_t ni = 0; ni < m.n_values().size(); ++ni) {
            const auto& a = m.at(bi, ni);
            const auto& b = back.at(bi, ni);
            ASSERT_EQ(a.has_value(), b.has_value());
            if (a) ASSERT_EQ(std::bit_cast<std::uint64_t>(a->rate), std::bit_cast<std::uint64_t>(b->rate));
        }
}

TEST(ExportJson, SchemaShape)
{
    MissMatrix m(SweepGrid{{1, 2}, {8}});
    m.set(1, 0, MatrixCell{0.5, 1});
    const auto j = nlohmann::json::parse(export_matrix(m, MatrixFormat::Json));
    EXPECT_TRUE(j.contains("metadata"));
    EXPECT_EQ(j["b_values"], nlohmann::json::array({1, 2}));
    EXPECT_EQ(j["n_values"], nlohmann::json::array({8}));
    EXPECT_TRUE(j["cells"][0].is_null());
    EXPECT_EQ(j["cells"][1], 0.5);
}

TEST(ImportJson, MalformedInputThrows)
{
    EXPECT_THROW(import_matrix_json("{not json"), std::runtime_error);
    EXPECT_THROW(import_matrix_json(R"({"b_values":[1],"n_values":[8],"cells":[]})"), std::runtime_error);
    EXPECT_THROW(import_matrix_json(R"({"b_values":[1],"n_values":[12],"cells":[0.0]})"), std::runtime_error);
}

TEST(ExportPlot, LongFormat)
{
    MissMatrix m(SweepGrid{{1, 2}, {8, 16}});
    m.set(0, 0, MatrixCell{0.0, 0});
    m.set(1, 1, MatrixCell{0.5, 1});
    EXPECT_EQ(export_matrix(m, MatrixFormat::Plot), "# B N miss_rate\n1 8 0.0\n\n2 16 0.5\n");
}

TEST(Heatmap, BucketsAreExhaustive)
{
    const auto r = HeatmapRendering::standard();
    EXPECT_EQ(r.glyph(0.0), '.');
    EXPECT_EQ(r.glyph(0.05), ':');
    EXPECT_EQ(r.glyph(0.17), ':');
    EXPECT_EQ(r.glyph(0.48), '+');
    EXPECT_EQ(r.glyph(0.6), 'x');
    EXPECT_EQ(r.glyph(1.0), '#');
    EXPECT_EQ(r.glyph(1.013), '!');
    EXPECT_THROW(HeatmapRendering::standard({0.5, 0.2}), std::invalid_argument);
}

TEST(RenderAscii, AllZero)
{
    const auto m = filled(SweepGrid::capacity_preset(), 0.0);
    const auto ls = lines(render_ascii(m));
    ASSERT_EQ(ls.size(), kAsciiHeaderLines + 8 + kAsciiLegendLines);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(row_glyphs(ls[kAsciiHeaderLines + i]), "........");
}

TEST(RenderAscii, SingleSaturatedAndOverflowCells)
{
    auto m = filled(SweepGrid{{1, 2, 4}, {8, 16}}, 0.0);
    m.set(1, 1, MatrixCell{1.0, std::nullopt});
    m.set(2, 0, MatrixCell{1.013, std::nullopt});
    m.set(0, 1, std::nullopt);
    const auto text = render_ascii(m);
    const auto ls = lines(text);
    ASSERT_EQ(ls.size(), kAsciiHeaderLines + 3 + kAsciiLegendLines);
    EXPECT_EQ(row_glyphs(ls[2]), ". ");
    EXPECT_EQ(row_glyphs(ls[3]), ".#");
    EXPECT_EQ(row_glyphs(ls[4]), "!.");
    EXPECT_EQ(text, render_ascii(m));
}

TEST(ReportJson, EchoesBothBitConventions)
{
    const auto m = merge({run_sweep(SimulatorBackend{k2048x2}, SweepGrid::capacity_preset()),
                          run_sweep(SimulatorBackend{k2048x2}, SweepGrid::set_index_preset())});
    const auto j = nlohmann::json::parse(report_to_json(infer_all(m)));
    EXPECT_EQ(j["index_lo"]["bit"], 4);
    EXPECT_EQ(j["index_lo"]["bit_1based"], 5);
    EXPECT_EQ(j["index_hi"]["bit_1based"], 15);
    EXPECT_EQ(j["capacity"]["entries"], 4096);
    EXPECT_EQ(j["complete"], true);
    const auto text = report_to_text(infer_all(m));
    EXPECT_NE(text.find("bit 4 (0-based) = bit 5 (1-based)"), std::string::npos);
}

TEST(ConfigJson, RoundTripAndPartialOverride)
{
    InferenceConfig c;
    c.theta_low = 0.3;
    c.plateau_outliers = 0;
    EXPECT_EQ(config_from_json(config_to_json(c)), c);
    const auto o = config_from_json(R"({"theta_zero": 0.1})", c);
    EXPECT_EQ(o.theta_zero, 0.1);
    EXPECT_EQ(o.theta_low, 0.3);
    EXPECT_THROW(config_from_json("[1,2"), std::runtime_error);
}
