#include "btbrecon/report.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace btbrecon {

using nlohmann::json;

namespace {

json geometry_json(const BtbGeometry& g)
{
    return {{"sets", g.sets()},         {"ways", g.ways},
            {"index_lo", g.index_lo},   {"index_hi", g.index_hi},
            {"tag_hi", g.tag_hi},       {"replacement", to_string(g.replacement)},
            {"seed", g.seed},           {"capacity", g.capacity()}};
}

BtbGeometry geometry_from_json(const json& j)
{
    BtbGeometry g;
    g.ways = j.at("ways").get<unsigned>();
    g.index_lo = j.at("index_lo").get<unsigned>();
    g.index_hi = j.at("index_hi").get<unsigned>();
    g.tag_hi = j.value("tag_hi", kVirtualAddressBits - 1);
    g.replacement = parse_replacement(j.value("replacement", std::string("lru")));
    g.seed = j.value("seed", std::uint64_t{0});
    g.validate();
    return g;
}

template <typename T>
json optional_json(const std::optional<T>& v)
{
    return v ? json(*v) : json(nullptr);
}

json evidence_json(const Evidence& ev)
{
    json cells = json::array();
    for (const auto& c : ev.cells) cells.push_back({{"B", c.b}, {"N", c.n}, {"rate", c.rate}});
    return {{"conclusion", ev.conclusion},
            {"cells", cells},
            {"comparisons", ev.comparisons},
            {"notes", ev.notes}};
}

json config_json(const InferenceConfig& cfg)
{
    return {{"theta_low", cfg.theta_low},
            {"delta_jump", cfg.delta_jump},
            {"epsilon_similar", cfg.epsilon_similar},
            {"theta_zero", cfg.theta_zero},
            {"capacity_band", cfg.capacity_band},
            {"plateau_outliers", cfg.plateau_outliers}};
}

json bit_json(const std::optional<unsigned>& bit)
{
    if (!bit) return nullptr;
    return {{"bit", *bit}, {"bit_1based", *bit + 1}};
}

} // namespace

std::string format_rate(double rate, int significant)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), rate, std::chars_format::general, significant);
    if (ec != std::errc{}) throw std::runtime_error("cannot format rate");
    std::string s(buf, end);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string export_matrix(const MissMatrix& matrix, MatrixFormat format)
{
    const auto& bs = matrix.b_values();
    const auto& ns = matrix.n_values();

    if (format == MatrixFormat::Json) {
        const auto& md = matrix.metadata;
        json meta = {{"backend", md.backend},
                     {"geometry", md.geometry ? geometry_json(*md.geometry) : json(nullptr)},
                     {"seed", optional_json(md.seed)},
                     {"noise_lambda", optional_json(md.noise_lambda)},
                     {"timestamp", optional_json(md.timestamp)},
                     {"warmup_rounds", matrix.grid().warmup_rounds},
                     {"measure_rounds", matrix.grid().measure_rounds},
                     {"notes", md.notes}};
        json cells = json::array();
        json counts = json::array();
        for (std::size_t bi = 0; bi < bs.size(); ++bi) {
            for (std::size_t ni = 0; ni < ns.size(); ++ni) {
                const auto& c = matrix.at(bi, ni);
                cells.push_back(c ? json(c->rate) : json(nullptr));
                counts.push_back(c && c->mispredictions ? json(*c->mispredictions) : json(nullptr));
            }
        }
        json doc = {{"metadata", meta}, {"b_values", bs}, {"n_values", ns}, {"cells", cells},
                    {"mispredictions", counts}};
        return doc.dump(2) + "\n";
    }

    std::ostringstream os;
    if (format == MatrixFormat::Csv) {
        os << "B";
        for (auto n : ns) os << ',' << n;
        os << "\n";
        for (std::size_t bi = 0; bi < bs.size(); ++bi) {
            os << bs[bi];
            for (std::size_t ni = 0; ni < ns.size(); ++ni) {
                os << ',';
                if (const auto& c = matrix.at(bi, ni)) os << format_rate(c->rate);
            }
            os << "\n";
        }
        return os.str();
    }

    os << "# B N miss_rate\n";
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
        if (bi > 0) os << "\n";
        for (std::size_t ni = 0; ni < ns.size(); ++ni)
            if (const auto& c = matrix.at(bi, ni)) os << bs[bi] << ' ' << ns[ni] << ' ' << format_rate(c->rate) << "\n";
    }
    return os.str();
}

MissMatrix import_matrix_json(const std::string& text)
{
    try {
        const json doc = json::parse(text);
        SweepGrid grid;
        grid.b_values = doc.at("b_values").get<std::vector<std::uint64_t>>();
        grid.n_values = doc.at("n_values").get<std::vector<std::uint64_t>>();
        const json& meta = doc.at("metadata");
        grid.warmup_rounds = meta.value("warmup_rounds", 10u);
        grid.measure_rounds = meta.value("measure_rounds", 1u);
        const bool empty = grid.b_values.empty() || grid.n_values.empty();
        if (!empty) grid.validate();

        MissMatrix m(grid);
        const json& cells = doc.at("cells");
        if (cells.size() != grid.cell_count())
            throw std::runtime_error("cells array has " + std::to_string(cells.size()) + " entries, expected " +
                                     std::to_string(grid.cell_count()));
        const json counts = doc.value("mispredictions", json::array());
        const std::size_t cols = grid.n_values.size();
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (cells[i].is_null()) continue;
            MatrixCell c{cells[i].get<double>(), std::nullopt};
            if (c.rate < 0.0) throw std::runtime_error("negative miss rate in cell " + std::to_string(i));
            if (i < counts.size() && !counts[i].is_null()) c.mispredictions = counts[i].get<std::uint64_t>();
            m.set(i / cols, i % cols, c);
        }

        m.metadata.backend = meta.value("backend", std::string{});
        if (meta.contains("geometry") && !meta["geometry"].is_null())
            m.metadata.geometry = geometry_from_json(meta["geometry"]);
        if (meta.contains("seed") && !meta["seed"].is_null()) m.metadata.seed = meta["seed"].get<std::uint64_t>();
        if (meta.contains("noise_lambda") && !meta["noise_lambda"].is_null())
            m.metadata.noise_lambda = meta["noise_lambda"].get<double>();
        if (meta.contains("timestamp") && !meta["timestamp"].is_null())
            m.metadata.timestamp = meta["timestamp"].get<std::string>();
        m.metadata.notes = meta.value("notes", std::vector<std::string>{});
        return m;
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed matrix json: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("malformed matrix json: ") + e.what());
    }
}

MissMatrix load_matrix(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return import_matrix_json(buf.str());
}

HeatmapRendering HeatmapRendering::standard(std::vector<double> boundaries)
{
    if (boundaries.size() > 8) throw std::invalid_argument("at most 8 bucket boundaries");
    for (std::size_t i = 1; i < boundaries.size(); ++i)
        if (!(boundaries[i - 1] < boundaries[i]))
            throw std::invalid_argument("bucket boundaries must be strictly ascending");

    HeatmapRendering r;
    r.boundaries = std::move(boundaries);
    if (r.boundaries.size() == 4) {
        r.glyphs = {'.', ':', '+', 'x', '#'};
    } else {
        static constexpr char palette[] = ".:-+x*%&";
        for (std::size_t i = 0; i < r.boundaries.size(); ++i) r.glyphs.push_back(palette[i]);
        r.glyphs.push_back('#');
    }
    return r;
}

char HeatmapRendering::glyph(double rate) const
{
    if (rate > 1.0) return overflow_glyph;
    std::size_t bucket = 0;
    while (bucket < boundaries.size() && rate >= boundaries[bucket]) ++bucket;
    return glyphs.at(bucket);
}

std::string render_ascii(const MissMatrix& matrix, const HeatmapRendering& rendering)
{
    std::ostringstream os;
    os << "miss-rate heatmap: rows B, columns log2(N)\n";
    os << std::setw(10) << "B" << " |";
    for (auto n : matrix.n_values()) {
        if (is_power_of_two(n))
            os << std::setw(3) << log2_floor(n);
        else
            os << std::setw(3) << '?';
    }
    os << "\n";
    for (std::size_t bi = 0; bi < matrix.b_values().size(); ++bi) {
        os << std::setw(10) << matrix.b_values()[bi] << " |";
        for (std::size_t ni = 0; ni < matrix.n_values().size(); ++ni) {
            const auto& c = matrix.at(bi, ni);
            os << "  " << (c ? rendering.glyph(c->rate) : rendering.missing_glyph);
        }
        os << "\n";
    }

    os << "legend:";
    for (std::size_t i = 0; i < rendering.glyphs.size(); ++i) {
        os << "  '" << rendering.glyphs[i] << "' ";
        if (i == 0)
            os << "<" << format_rate(rendering.boundaries.empty() ? 1.0 : rendering.boundaries[0], 6);
        else if (i == rendering.boundaries.size())
            os << ">=" << format_rate(rendering.boundaries.back(), 6) << " (to 1.0)";
        else
            os << "[" << format_rate(rendering.boundaries[i - 1], 6) << "," << format_rate(rendering.boundaries[i], 6)
               << ")";
    }
    os << "\n";
    os << "        '" << rendering.overflow_glyph << "' >1.0 (noise overflow)  '" << rendering.missing_glyph
       << "' not measured\n";
    return os.str();
}

std::string report_to_json(const InferenceReport& report)
{
    json capacity = nullptr;
    if (report.capacity)
        capacity = {{"entries", report.capacity->entries},
                    {"raw", report.capacity->raw},
                    {"grid_limited", report.capacity->grid_limited},
                    {"reference_stride", report.capacity->reference_stride}};
    json verdict = nullptr;
    if (report.verdict)
        verdict = {{"consistent", report.verdict->consistent},
                   {"sets", report.verdict->sets},
                   {"sets_times_ways", report.verdict->product},
                   {"suggestions", report.verdict->suggestions}};
    json evidence = json::array();
    for (const auto& ev : report.evidence) evidence.push_back(evidence_json(ev));

    json doc = {{"capacity", capacity},
                {"index_lo", bit_json(report.index_lo)},
                {"index_hi", bit_json(report.index_hi)},
                {"sets", optional_json(report.sets)},
                {"ways", optional_json(report.ways)},
                {"consistent", report.verdict ? json(report.verdict->consistent) : json(nullptr)},
                {"cross_check", verdict},
                {"complete", report.complete()},
                {"indeterminate", report.indeterminate},
                {"evidence", evidence},
                {"assumptions", report.assumptions},
                {"config", config_json(report.config)}};
    return doc.dump(2) + "\n";
}

std::string report_to_text(const InferenceReport& report)
{
    std::ostringstream os;
    auto missing = [&](const std::string& field) {
        auto it = report.indeterminate.find(field);
        return "indeterminate (" + (it == report.indeterminate.end() ? std::string("n/a") : it->second) + ")";
    };

    os << "BTB inference report\n";
    os << "  capacity : ";
    if (report.capacity) {
        if (report.capacity->grid_limited)
            os << ">= " << report.capacity->raw << " entries (grid-limited)";
        else
            os << report.capacity->entries << " entries (raw grid value " << report.capacity->raw << ")";
    } else {
        os << missing("capacity");
    }
    os << "\n";
    auto bit_line = [&](const char* label, const std::optional<unsigned>& bit, const std::string& field) {
        os << "  " << label << ": ";
        if (bit)
            os << "bit " << *bit << " (0-based) = bit " << *bit + 1 << " (1-based)";
        else
            os << missing(field);
        os << "\n";
    };
    bit_line("index_lo ", report.index_lo, "index_lo");
    bit_line("index_hi ", report.index_hi, "index_hi");
    os << "  sets     : ";
    if (report.sets)
        os << *report.sets << " (" << (*report.index_hi - *report.index_lo + 1) << " index bits)";
    else
        os << missing("sets");
    os << "\n";
    os << "  ways     : ";
    if (report.ways)
        os << *report.ways;
    else
        os << missing("ways");
    os << "\n";
    os << "  check    : ";
    if (report.verdict) {
        os << report.verdict->sets << " sets x " << *report.ways << " ways = " << report.verdict->product
           << (report.verdict->consistent ? " == " : " != ") << report.capacity->entries
           << (report.verdict->consistent ? " (consistent)" : " (inconsistent)");
        for (const auto& s : report.verdict->suggestions) os << "; try " << s;
    } else {
        os << "not run (missing parameters)";
    }
    os << "\n";
    os << "  status   : " << (report.complete() ? "complete" : "partial") << "\n";

    for (const auto& ev : report.evidence) {
        os << "\nevidence for " << ev.conclusion << ":\n";
        for (const auto& c : ev.comparisons) os << "  - " << c << "\n";
        for (const auto& n : ev.notes) os << "  * " << n << "\n";
    }
    os << "\nassumptions:\n";
    for (const auto& a : report.assumptions) os << "  - " << a << "\n";
    return os.str();
}

std::string config_to_json(const InferenceConfig& cfg)
{
    return config_json(cfg).dump(2) + "\n";
}

InferenceConfig config_from_json(const std::string& text, InferenceConfig base)
{
    try {
        const json j = json::parse(text);
        base.theta_low = j.value("theta_low", base.theta_low);
        base.delta_jump = j.value("delta_jump", base.delta_jump);
        base.epsilon_similar = j.value("epsilon_similar", base.epsilon_similar);
        base.theta_zero = j.value("theta_zero", base.theta_zero);
        base.capacity_band = j.value("capacity_band", base.capacity_band);
        base.plateau_outliers = j.value("plateau_outliers", base.plateau_outliers);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed inference config: ") + e.what());
    }
    base.validate();
    return base;
}

} // namespace btbrecon
