#include "btbrecon/cli.hpp"

#include "btbrecon/gadget.hpp"
#include "btbrecon/infer.hpp"
#include "btbrecon/report.hpp"
#include "btbrecon/sweep.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace btbrecon::cli {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

void write_file(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    if (!f) throw std::runtime_error("error writing " + path);
}

std::string read_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

std::vector<SweepGrid> preset_grids(const std::string& preset)
{
    if (preset == "capacity") return {SweepGrid::capacity_preset()};
    if (preset == "set-index") return {SweepGrid::set_index_preset()};
    if (preset == "both") return {SweepGrid::capacity_preset(), SweepGrid::set_index_preset()};
    throw UsageError("unknown preset '" + preset + "'");
}

std::string utc_timestamp()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
}

struct SweepFlags
{
    std::string backend = "sim";
    std::uint64_t sets = 2048;
    unsigned ways = 2;
    unsigned index_lo = 4;
    unsigned tag_hi = kVirtualAddressBits - 1;
    std::string repl = "lru";
    std::uint64_t seed = 0;
    double noise_lambda = 0.0;
    std::string preset = "capacity";
    std::vector<std::uint64_t> b_values;
    std::vector<std::uint64_t> n_values;
    unsigned warmup = 10;
    unsigned measure = 1;
    unsigned threads = 0;
    std::string in;
    std::string out;
    bool timestamp = false;
};

int cmd_sweep(const SweepFlags& f, std::ostream& out, std::ostream& err)
{
    // Validate everything before simulating.
    std::vector<SweepGrid> grids;
    Backend backend;
    if (f.backend == "sim") {
        BtbGeometry geometry;
        try {
            geometry = BtbGeometry::from_sets(f.sets, f.ways, f.index_lo, parse_replacement(f.repl));
            geometry.seed = f.seed;
            geometry.tag_hi = f.tag_hi;
            geometry.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("invalid geometry: ") + e.what());
        }
        if (f.noise_lambda < 0.0) throw UsageError("--noise-lambda must be >= 0");
        SimulatorBackend sim{geometry, f.noise_lambda > 0.0 ? NoiseModel::poisson(f.noise_lambda, f.seed)
                                                            : NoiseModel::off()};
        backend = sim;
        if (f.preset == "derived") grids = {SweepGrid::derived(geometry)};
    } else if (f.backend == "csv") {
        if (f.in.empty()) throw UsageError("--backend csv requires --in");
        if (f.preset == "derived") throw UsageError("--preset derived needs the sim backend");
        auto ingested = ingest_csv_file(f.in);
        for (const auto& w : ingested.warnings) err << "warning: " << w << "\n";
        backend = DatasetBackend{std::move(ingested.records), "csv"};
    } else {
        throw UsageError("unknown backend '" + f.backend + "' (expected sim|csv)");
    }

    if (!f.b_values.empty() || !f.n_values.empty()) {
        if (f.b_values.empty() || f.n_values.empty())
            throw UsageError("--b-values and --n-values must be given together");
        SweepGrid g;
        g.b_values = f.b_values;
        g.n_values = f.n_values;
        grids = {g};
    } else if (grids.empty()) {
        grids = preset_grids(f.preset);
    }
    for (auto& g : grids) {
        g.warmup_rounds = f.warmup;
        g.measure_rounds = f.measure;
        try {
            g.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("invalid grid: ") + e.what());
        }
    }

    std::vector<MissMatrix> parts;
    for (const auto& g : grids) parts.push_back(run_sweep(backend, g, SweepOptions{f.threads}));
    MissMatrix matrix = merge(parts);
    if (f.timestamp) matrix.metadata.timestamp = utc_timestamp();

    write_file(f.out, export_matrix(matrix, MatrixFormat::Json));
    out << "wrote " << f.out << " (" << matrix.b_values().size() << " B x " << matrix.n_values().size()
        << " N, " << matrix.present_count() << " cells)\n";
    return kComplete;
}

struct InferFlags
{
    std::string matrix;
    std::string out;
    std::string config;
    std::optional<double> theta_low, delta_jump, epsilon_similar, theta_zero, capacity_band;
    std::optional<unsigned> plateau_outliers;
    bool quiet = false;
};

int cmd_infer(const InferFlags& f, std::ostream& out)
{
    InferenceConfig cfg;
    if (!f.config.empty()) cfg = config_from_json(read_file(f.config));
    if (f.theta_low) cfg.theta_low = *f.theta_low;
    if (f.delta_jump) cfg.delta_jump = *f.delta_jump;
    if (f.epsilon_similar) cfg.epsilon_similar = *f.epsilon_similar;
    if (f.theta_zero) cfg.theta_zero = *f.theta_zero;
    if (f.capacity_band) cfg.capacity_band = *f.capacity_band;
    if (f.plateau_outliers) cfg.plateau_outliers = *f.plateau_outliers;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const MissMatrix matrix = load_matrix(f.matrix);
    const InferenceReport report = infer_all(matrix, cfg);
    if (!f.out.empty()) write_file(f.out, report_to_json(report));
    if (!f.quiet) out << report_to_text(report);
    return report.complete() ? kComplete : kPartial;
}

struct EmitFlags
{
    std::uint64_t b = 0;
    std::uint64_t n = 0;
    std::string out;
    std::string preset;
    std::string out_dir;
    std::string symbol = "btb_gadget";
    std::uint64_t nop_limit = 256;
};

int cmd_emit(const EmitFlags& f, std::ostream& out)
{
    EmitOptions options{f.symbol, f.nop_limit};
    auto check = [](const GadgetSpec& spec) {
        GadgetSpec s = spec;
        s.base_address = 0; // placement is the loader's job
        if (auto v = validate_spec(s); !v.empty()) {
            std::string msg;
            for (const auto& x : v) msg += (msg.empty() ? "" : "; ") + x;
            throw UsageError(msg);
        }
    };

    if (!f.preset.empty()) {
        if (f.out_dir.empty()) throw UsageError("--preset requires --out-dir");
        const auto grids = preset_grids(f.preset);
        fs::create_directories(f.out_dir);
        std::ostringstream manifest;
        manifest << "file,B,N\n";
        std::size_t files = 0;
        for (const auto& g : grids) {
            for (auto b : g.b_values) {
                for (auto n : g.n_values) {
                    GadgetSpec spec{b, n, 0, 0};
                    check(spec);
                    const std::string name = "gadget_B" + std::to_string(b) + "_N" + std::to_string(n) + ".S";
                    write_file((fs::path(f.out_dir) / name).string(), emit_asm(spec, options));
                    manifest << name << ',' << b << ',' << n << "\n";
                    ++files;
                }
            }
        }
        write_file((fs::path(f.out_dir) / "manifest.csv").string(), manifest.str());
        out << "wrote " << files << " gadgets and manifest.csv to " << f.out_dir << "\n";
        return kComplete;
    }

    if (f.b == 0 || f.n == 0) throw UsageError("emit needs --b and --n (or --preset with --out-dir)");
    if (f.out.empty()) throw UsageError("emit needs --out");
    GadgetSpec spec{f.b, f.n, 0, 0};
    check(spec);
    std::string text;
    try {
        text = emit_asm(spec, options);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    write_file(f.out, text);
    out << "wrote " << f.out << "\n";
    return kComplete;
}

struct RenderFlags
{
    std::string matrix;
    std::string format = "ascii";
    std::vector<double> buckets{0.05, 0.25, 0.5, 0.9};
    std::string out;
};

int cmd_render(const RenderFlags& f, std::ostream& out)
{
    HeatmapRendering rendering;
    try {
        rendering = HeatmapRendering::standard(f.buckets);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const MissMatrix matrix = load_matrix(f.matrix);
    std::string text;
    if (f.format == "ascii")
        text = render_ascii(matrix, rendering);
    else if (f.format == "csv")
        text = export_matrix(matrix, MatrixFormat::Csv);
    else if (f.format == "plot")
        text = export_matrix(matrix, MatrixFormat::Plot);
    else
        text = export_matrix(matrix, MatrixFormat::Json);
    if (f.out.empty())
        out << text;
    else
        write_file(f.out, text);
    return kComplete;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"btbrecon: probe, simulate and infer branch target buffer geometry"};
    app.name("btbrecon");
    app.require_subcommand(1);

    SweepFlags sweep;
    auto* s = app.add_subcommand("sweep", "Run a (B, N) sweep and write a matrix file");
    s->add_option("--backend", sweep.backend, "sim|csv")->check(CLI::IsMember({"sim", "csv"}));
    s->add_option("--sets", sweep.sets, "Simulated set count (power of two)");
    s->add_option("--ways", sweep.ways, "Simulated ways per set")->check(CLI::PositiveNumber);
    s->add_option("--index-lo", sweep.index_lo, "Lowest PC bit of the set index (0-based)");
    s->add_option("--tag-hi", sweep.tag_hi, "Highest PC bit kept in the tag");
    s->add_option("--repl", sweep.repl, "lru|fifo|random")->check(CLI::IsMember({"lru", "fifo", "random"}));
    s->add_option("--seed", sweep.seed, "Seed for noise and random replacement");
    s->add_option("--noise-lambda", sweep.noise_lambda, "Poisson noise rate per branch");
    s->add_option("--preset", sweep.preset, "capacity|set-index|both|derived")
        ->check(CLI::IsMember({"capacity", "set-index", "both", "derived"}));
    s->add_option("--b-values", sweep.b_values, "Explicit B axis")->delimiter(',');
    s->add_option("--n-values", sweep.n_values, "Explicit N axis")->delimiter(',');
    s->add_option("--warmup", sweep.warmup, "Warm-up rounds");
    s->add_option("--measure", sweep.measure, "Measured rounds");
    s->add_option("--threads", sweep.threads, "Worker threads (0 = all cores)");
    s->add_option("--in", sweep.in, "Line-protocol CSV for --backend csv");
    s->add_option("--out", sweep.out, "Matrix JSON output")->required();
    s->add_flag("--timestamp", sweep.timestamp, "Record the UTC time in the matrix metadata");

    InferFlags infer;
    auto* i = app.add_subcommand("infer", "Infer BTB parameters from a matrix file");
    i->add_option("--matrix", infer.matrix, "Matrix JSON")->required();
    i->add_option("--out", infer.out, "Report JSON output");
    i->add_option("--config", infer.config, "InferenceConfig JSON");
    i->add_option("--theta-low", infer.theta_low);
    i->add_option("--delta-jump", infer.delta_jump);
    i->add_option("--epsilon-similar", infer.epsilon_similar);
    i->add_option("--theta-zero", infer.theta_zero);
    i->add_option("--capacity-band", infer.capacity_band);
    i->add_option("--plateau-outliers", infer.plateau_outliers);
    i->add_flag("--quiet", infer.quiet, "Do not print the text report");

    EmitFlags emit;
    auto* e = app.add_subcommand("emit", "Emit aarch64 probe gadget assembly");
    e->add_option("--b", emit.b, "Branch count");
    e->add_option("--n", emit.n, "Stride in bytes");
    e->add_option("--out", emit.out, "Output .S file");
    e->add_option("--preset", emit.preset, "capacity|set-index|both")
        ->check(CLI::IsMember({"capacity", "set-index", "both"}));
    e->add_option("--out-dir", emit.out_dir, "Directory for preset emission");
    e->add_option("--symbol", emit.symbol, "Entry symbol name");
    e->add_option("--nop-limit", emit.nop_limit, "Write nops explicitly up to this stride");

    RenderFlags render;
    auto* r = app.add_subcommand("render", "Render a matrix file");
    r->add_option("--matrix", render.matrix, "Matrix JSON")->required();
    r->add_option("--format", render.format, "ascii|csv|plot|json")
        ->check(CLI::IsMember({"ascii", "csv", "plot", "json"}));
    r->add_option("--buckets", render.buckets, "Ascending bucket boundaries")->delimiter(',');
    r->add_option("--out", render.out, "Write to a file instead of stdout");

    std::vector<std::string> argv_storage{"btbrecon"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kComplete : kError;
    }

    try {
        if (s->parsed()) return cmd_sweep(sweep, out, err);
        if (i->parsed()) return cmd_infer(infer, out);
        if (e->parsed()) return cmd_emit(emit, out);
        if (r->parsed()) return cmd_render(render, out);
    } catch (const UsageError& ex) {
        err << "usage error: " << ex.what() << "\n";
        return kError;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kError;
    }
    return kError;
}

} // namespace btbrecon::cli
