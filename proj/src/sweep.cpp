#include "btbrecon/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace btbrecon {

SweepGrid SweepGrid::capacity_preset()
{
    SweepGrid grid;
    for (std::uint64_t b = 1024; b <= 8192; b += 1024) grid.b_values.push_back(b);
    for (std::uint64_t n = 8; n <= 1024; n *= 2) grid.n_values.push_back(n);
    return grid;
}

SweepGrid SweepGrid::set_index_preset()
{
    SweepGrid grid;
    for (std::uint64_t b = 1; b <= 512; b *= 2) grid.b_values.push_back(b);
    for (unsigned e = 5; e <= 19; ++e) grid.n_values.push_back(std::uint64_t{1} << e);
    return grid;
}

SweepGrid SweepGrid::derived(const BtbGeometry& geometry)
{
    geometry.validate();
    SweepGrid grid;
    for (std::uint64_t b = 1; b <= 2 * geometry.capacity(); b *= 2) grid.b_values.push_back(b);
    for (unsigned e = 3; e <= geometry.index_hi + 3; ++e) grid.n_values.push_back(std::uint64_t{1} << e);
    return grid;
}

void SweepGrid::validate() const
{
    if (b_values.empty() || n_values.empty())
        throw std::invalid_argument("sweep grid needs at least one B and one N value");
    if (!std::is_sorted(b_values.begin(), b_values.end()) ||
        std::adjacent_find(b_values.begin(), b_values.end()) != b_values.end())
        throw std::invalid_argument("B values must be strictly ascending");
    if (!std::is_sorted(n_values.begin(), n_values.end()) ||
        std::adjacent_find(n_values.begin(), n_values.end()) != n_values.end())
        throw std::invalid_argument("N values must be strictly ascending");
    if (b_values.front() < 1)
        throw std::invalid_argument("B values must be >= 1");
    for (auto n : n_values)
        if (!is_power_of_two(n) || n < kMinStride)
            throw std::invalid_argument("N value " + std::to_string(n) + " is not a power of two >= 8");
    if (measure_rounds < 1)
        throw std::invalid_argument("measure_rounds must be >= 1");
}

MissMatrix::MissMatrix(SweepGrid grid)
    : grid_(std::move(grid)),
      cells_(grid_.b_values.size() * grid_.n_values.size())
{
}

const std::optional<MatrixCell>& MissMatrix::at(std::size_t b_index, std::size_t n_index) const
{
    return cells_.at(b_index * grid_.n_values.size() + n_index);
}

void MissMatrix::set(std::size_t b_index, std::size_t n_index, std::optional<MatrixCell> cell)
{
    cells_.at(b_index * grid_.n_values.size() + n_index) = std::move(cell);
}

std::optional<std::size_t> MissMatrix::b_index(std::uint64_t b) const
{
    auto it = std::lower_bound(grid_.b_values.begin(), grid_.b_values.end(), b);
    if (it == grid_.b_values.end() || *it != b) return std::nullopt;
    return static_cast<std::size_t>(it - grid_.b_values.begin());
}

std::optional<std::size_t> MissMatrix::n_index(std::uint64_t n) const
{
    auto it = std::lower_bound(grid_.n_values.begin(), grid_.n_values.end(), n);
    if (it == grid_.n_values.end() || *it != n) return std::nullopt;
    return static_cast<std::size_t>(it - grid_.n_values.begin());
}

std::optional<MatrixCell> MissMatrix::cell(std::uint64_t b, std::uint64_t n) const
{
    auto bi = b_index(b);
    auto ni = n_index(n);
    if (!bi || !ni) return std::nullopt;
    return at(*bi, *ni);
}

std::optional<double> MissMatrix::rate(std::uint64_t b, std::uint64_t n) const
{
    auto c = cell(b, n);
    if (!c) return std::nullopt;
    return c->rate;
}

std::size_t MissMatrix::present_count() const
{
    return static_cast<std::size_t>(
        std::count_if(cells_.begin(), cells_.end(), [](const auto& c) { return c.has_value(); }));
}

std::uint64_t cell_seed(std::uint64_t seed, std::uint64_t b, std::uint64_t n)
{
    // splitmix64 finaliser over the combined inputs
    std::uint64_t z = seed ^ (b * 0x9E3779B97F4A7C15ull) ^ (n * 0xC2B2AE3D27D4EB4Full);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

MeasurementRecord simulate_cell(const SimulatorBackend& sim, const SweepGrid& grid, std::uint64_t b,
                                std::uint64_t n)
{
    GadgetSpec spec;
    spec.branch_count = b;
    spec.stride = n;
    spec.base_address = sim.base_address;
    const auto trace = build_trace(spec);
    MeasurementRecord record = replay(sim.geometry, trace, grid.warmup_rounds, grid.measure_rounds);
    record.stride = n;
    NoiseModel noise = sim.noise;
    noise.seed = cell_seed(sim.noise.seed, b, n);
    return inject_noise(record, noise);
}

MissMatrix sweep_simulator(const SimulatorBackend& sim, const SweepGrid& grid, const SweepOptions& options)
{
    MissMatrix matrix(grid);
    const std::size_t cols = grid.n_values.size();
    const std::size_t total = grid.cell_count();
    std::vector<MeasurementRecord> results(total);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < total; i = next++) {
            results[i] = simulate_cell(sim, grid, grid.b_values[i / cols], grid.n_values[i % cols]);
        }
    };

    unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, total));
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
    }

    for (std::size_t i = 0; i < total; ++i)
        matrix.set(i / cols, i % cols, MatrixCell{results[i].miss_rate(), results[i].mispredictions});

    matrix.metadata.backend = "sim";
    matrix.metadata.geometry = sim.geometry;
    if (sim.noise.enabled) {
        matrix.metadata.seed = sim.noise.seed;
        matrix.metadata.noise_lambda = sim.noise.lambda;
    } else if (sim.geometry.replacement == Replacement::Random) {
        matrix.metadata.seed = sim.geometry.seed;
    }
    return matrix;
}

MissMatrix sweep_dataset(const DatasetBackend& data, const SweepGrid& grid)
{
    // Repeated (B, N) observations are pooled: counts and rounds add up,
    // which yields the mean rate when rounds agree.
    struct Pooled
    {
        std::uint64_t mispredictions = 0;
        std::uint64_t rounds = 0;
    };
    std::map<std::pair<std::uint64_t, std::uint64_t>, Pooled> pooled;
    for (const auto& r : data.records) {
        auto& p = pooled[{r.branch_count, r.stride}];
        p.mispredictions += r.mispredictions;
        p.rounds += r.measure_rounds;
    }

    MissMatrix matrix(grid);
    for (std::size_t bi = 0; bi < grid.b_values.size(); ++bi) {
        for (std::size_t ni = 0; ni < grid.n_values.size(); ++ni) {
            const auto b = grid.b_values[bi];
            const auto n = grid.n_values[ni];
            auto it = pooled.find({b, n});
            if (it == pooled.end())
                throw std::runtime_error("dataset has no measurement for cell (B=" + std::to_string(b) +
                                         ", N=" + std::to_string(n) + ")");
            const double rate = static_cast<double>(it->second.mispredictions) /
                                (static_cast<double>(b) * static_cast<double>(it->second.rounds));
            std::optional<std::uint64_t> count;
            if (it->second.rounds == grid.measure_rounds) count = it->second.mispredictions;
            matrix.set(bi, ni, MatrixCell{rate, count});
        }
    }
    matrix.metadata.backend = data.label;
    return matrix;
}

} // namespace

MissMatrix run_sweep(const Backend& backend, const SweepGrid& grid, const SweepOptions& options)
{
    grid.validate();
    if (const auto* sim = std::get_if<SimulatorBackend>(&backend))
        return sweep_simulator(*sim, grid, options);
    return sweep_dataset(std::get<DatasetBackend>(backend), grid);
}

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

bool parse_u64(std::string_view text, std::uint64_t& out)
{
    text = trim(text);
    if (text.empty()) return false;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc{} && ptr == text.data() + text.size();
}

std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

} // namespace

IngestResult ingest_csv(std::istream& in, const std::string& backend_label)
{
    IngestResult result;
    std::uint32_t rounds = 1;
    bool seen_data = false;
    std::string raw;
    std::size_t line_no = 0;

    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = trim(raw);
        if (line.empty()) continue;

        if (line.front() == '#') {
            const std::string_view body = trim(line.substr(1));
            constexpr std::string_view key = "measure_rounds";
            if (body.starts_with(key)) {
                const std::string_view rest = trim(body.substr(key.size()));
                std::uint64_t k = 0;
                if (rest.empty() || rest.front() != '=' || !parse_u64(rest.substr(1), k) || k == 0 ||
                    k > UINT32_MAX)
                    throw std::runtime_error("line " + std::to_string(line_no) +
                                             ": malformed measure_rounds directive");
                rounds = static_cast<std::uint32_t>(k);
            }
            continue;
        }

        const auto fields = split_commas(line);
        if (!seen_data && fields.size() == 3 && trim(fields[0]) == "B" && trim(fields[1]) == "N" &&
            trim(fields[2]) == "C") {
            seen_data = true;
            continue;
        }
        seen_data = true;

        MeasurementRecord r;
        if (fields.size() != 3 || !parse_u64(fields[0], r.branch_count) || !parse_u64(fields[1], r.stride) ||
            !parse_u64(fields[2], r.mispredictions))
            throw std::runtime_error("line " + std::to_string(line_no) + ": malformed record '" +
                                     std::string(line) + "' (expected B,N,C)");
        if (r.branch_count == 0)
            throw std::runtime_error("line " + std::to_string(line_no) + ": branch count must be >= 1");
        r.measure_rounds = rounds;
        r.backend = backend_label;

        if (!is_power_of_two(r.stride))
            result.warnings.push_back("line " + std::to_string(line_no) + ": stride " + std::to_string(r.stride) +
                                      " is not a power of two");
        if (r.exceeds_unity()) {
            std::ostringstream msg;
            msg << "line " << line_no << ": miss rate " << r.miss_rate() << " exceeds 1.0 (kept)";
            result.warnings.push_back(msg.str());
        }
        result.records.push_back(std::move(r));
    }
    return result;
}

IngestResult ingest_csv_file(const std::string& path, const std::string& backend_label)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    return ingest_csv(in, backend_label);
}

std::string to_line_protocol(const std::vector<MeasurementRecord>& records)
{
    std::ostringstream os;
    os << "B,N,C\n";
    std::uint32_t rounds = 1;
    for (const auto& r : records) {
        if (r.measure_rounds != rounds) {
            os << "# measure_rounds=" << r.measure_rounds << "\n";
            rounds = r.measure_rounds;
        }
        os << r.branch_count << ',' << r.stride << ',' << r.mispredictions << "\n";
    }
    return os.str();
}

std::vector<MeasurementRecord> matrix_records(const MissMatrix& matrix)
{
    std::vector<MeasurementRecord> records;
    for (std::size_t bi = 0; bi < matrix.b_values().size(); ++bi) {
        for (std::size_t ni = 0; ni < matrix.n_values().size(); ++ni) {
            const auto& c = matrix.at(bi, ni);
            if (!c) continue;
            if (!c->mispredictions)
                throw std::invalid_argument("cell (B=" + std::to_string(matrix.b_values()[bi]) +
                                            ", N=" + std::to_string(matrix.n_values()[ni]) +
                                            ") has no integral misprediction count");
            MeasurementRecord r;
            r.branch_count = matrix.b_values()[bi];
            r.stride = matrix.n_values()[ni];
            r.mispredictions = *c->mispredictions;
            r.measure_rounds = matrix.grid().measure_rounds;
            r.backend = matrix.metadata.backend;
            records.push_back(std::move(r));
        }
    }
    return records;
}

MissMatrix merge(const std::vector<MissMatrix>& matrices)
{
    std::vector<const MissMatrix*> inputs;
    for (const auto& m : matrices)
        if (!m.empty()) inputs.push_back(&m);
    if (inputs.empty()) return {};
    if (inputs.size() == 1) return *inputs.front();

    const auto& first = inputs.front()->grid();
    for (const auto* m : inputs)
        if (m->grid().warmup_rounds != first.warmup_rounds || m->grid().measure_rounds != first.measure_rounds)
            throw std::invalid_argument("cannot merge matrices with different warmup/measure rounds");

    std::set<std::uint64_t> bs, ns;
    for (const auto* m : inputs) {
        bs.insert(m->b_values().begin(), m->b_values().end());
        ns.insert(m->n_values().begin(), m->n_values().end());
    }
    SweepGrid grid;
    grid.b_values.assign(bs.begin(), bs.end());
    grid.n_values.assign(ns.begin(), ns.end());
    grid.warmup_rounds = first.warmup_rounds;
    grid.measure_rounds = first.measure_rounds;

    MissMatrix out(grid);
    out.metadata = inputs.front()->metadata;
    for (std::size_t i = 1; i < inputs.size(); ++i) {
        const auto& md = inputs[i]->metadata;
        if (md.backend != out.metadata.backend) out.metadata.backend += "+" + md.backend;
        if (md.geometry != out.metadata.geometry) out.metadata.geometry.reset();
        if (md.seed != out.metadata.seed) out.metadata.seed.reset();
        if (md.noise_lambda != out.metadata.noise_lambda) out.metadata.noise_lambda.reset();
        if (md.timestamp != out.metadata.timestamp) out.metadata.timestamp.reset();
        out.metadata.notes.insert(out.metadata.notes.end(), md.notes.begin(), md.notes.end());
    }

    for (std::size_t bi = 0; bi < grid.b_values.size(); ++bi) {
        for (std::size_t ni = 0; ni < grid.n_values.size(); ++ni) {
            const auto b = grid.b_values[bi];
            const auto n = grid.n_values[ni];
            std::vector<MatrixCell> seen;
            for (const auto* m : inputs)
                if (auto c = m->cell(b, n)) seen.push_back(*c);
            if (seen.empty()) continue;

            const bool agree = std::all_of(seen.begin(), seen.end(),
                                           [&](const MatrixCell& c) { return c.rate == seen.front().rate; });
            if (agree) {
                MatrixCell merged = seen.front();
                for (const auto& c : seen)
                    if (c.mispredictions != merged.mispredictions) merged.mispredictions.reset();
                out.set(bi, ni, merged);
                continue;
            }
            double sum = 0.0;
            std::ostringstream note;
            note << "conflict at (B=" << b << ", N=" << n << "): rates";
            for (const auto& c : seen) {
                sum += c.rate;
                note << ' ' << c.rate;
            }
            const double mean = sum / static_cast<double>(seen.size());
            note << " -> mean " << mean;
            out.metadata.notes.push_back(note.str());
            out.set(bi, ni, MatrixCell{mean, std::nullopt});
        }
    }
    return out;
}

} // namespace btbrecon
