#pragma once

#include "btbrecon/infer.hpp"
#include "btbrecon/sweep.hpp"

#include <string>
#include <vector>

namespace btbrecon {

enum class MatrixFormat { Json, Csv, Plot };

/// Json: {metadata, b_values, n_values, cells, mispredictions}, cells
/// row-major by B then N with null for missing cells; lossless.
/// Csv: header "B,<N...>", one row per B, rates with 12 significant digits,
/// empty fields for missing cells.
/// Plot: whitespace table "B N rate" with a blank line between B rows
/// (gnuplot pm3d / vega long format); missing cells omitted.
std::string export_matrix(const MissMatrix& matrix, MatrixFormat format);

/// Reads the Json form back. Throws std::runtime_error on malformed input.
MissMatrix import_matrix_json(const std::string& text);
MissMatrix load_matrix(const std::string& path);

/// Locale-independent shortest text for a rate at `significant` digits;
/// integral values keep a trailing ".0".
std::string format_rate(double rate, int significant = 12);

struct HeatmapRendering
{
    std::vector<double> boundaries;   // strictly ascending
    std::vector<char> glyphs;         // boundaries.size() + 1 buckets
    char overflow_glyph = '!';        // rate > 1.0
    char missing_glyph = ' ';

    static HeatmapRendering standard(std::vector<double> boundaries = {0.05, 0.25, 0.5, 0.9});

    /// Bucket glyph for a rate; every rate maps to exactly one bucket.
    char glyph(double rate) const;
};

/// Lines before the first B row and after the last one.
inline constexpr std::size_t kAsciiHeaderLines = 2;
inline constexpr std::size_t kAsciiLegendLines = 2;

std::string render_ascii(const MissMatrix& matrix, const HeatmapRendering& rendering = HeatmapRendering::standard());

std::string report_to_json(const InferenceReport& report);
std::string report_to_text(const InferenceReport& report);

std::string config_to_json(const InferenceConfig& cfg);
/// Overrides the fields present in `json` on top of `base`.
InferenceConfig config_from_json(const std::string& json, InferenceConfig base = {});

} // namespace btbrecon
