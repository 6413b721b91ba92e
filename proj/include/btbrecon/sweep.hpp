#pragma once

#include "btbrecon/btb_sim.hpp"
#include "btbrecon/gadget.hpp"
#include "btbrecon/measurement.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace btbrecon {

/// The (B, N) experiment grid.
struct SweepGrid
{
    std::vector<std::uint64_t> b_values;
    std::vector<std::uint64_t> n_values;
    unsigned warmup_rounds = 10;
    unsigned measure_rounds = 1;

    /// B = 1K..8K step 1K, N = 8..1024.
    static SweepGrid capacity_preset();
    /// B = 1, 2, 4 .. 512, N = 2^5..2^19.
    static SweepGrid set_index_preset();
    /// Grid sized from a hypothesis: B = 1, 2, 4 .. 2*capacity and
    /// N = 8 .. 2^(index_hi + 3).
    static SweepGrid derived(const BtbGeometry& geometry);

    /// Throws std::invalid_argument on empty/unsorted axes or bad strides.
    void validate() const;

    std::size_t cell_count() const { return b_values.size() * n_values.size(); }

    bool operator==(const SweepGrid&) const = default;
};

struct MatrixCell
{
    double rate = 0.0;
    /// Raw count when the rate came from one integral measurement; absent
    /// after conflicting merges.
    std::optional<std::uint64_t> mispredictions;

    bool operator==(const MatrixCell&) const = default;
};

struct MatrixMetadata
{
    std::string backend;
    std::optional<BtbGeometry> geometry;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise_lambda;
    std::optional<std::string> timestamp;
    std::vector<std::string> notes;

    bool operator==(const MatrixMetadata&) const = default;
};

/// Miss rates over a grid. Unmeasured cells are absent, never 0.0.
class MissMatrix
{
public:
    MissMatrix() = default;
    explicit MissMatrix(SweepGrid grid);

    const SweepGrid& grid() const { return grid_; }
    const std::vector<std::uint64_t>& b_values() const { return grid_.b_values; }
    const std::vector<std::uint64_t>& n_values() const { return grid_.n_values; }

    const std::optional<MatrixCell>& at(std::size_t b_index, std::size_t n_index) const;
    void set(std::size_t b_index, std::size_t n_index, std::optional<MatrixCell> cell);

    std::optional<MatrixCell> cell(std::uint64_t b, std::uint64_t n) const;
    std::optional<double> rate(std::uint64_t b, std::uint64_t n) const;

    std::optional<std::size_t> b_index(std::uint64_t b) const;
    std::optional<std::size_t> n_index(std::uint64_t n) const;

    std::size_t present_count() const;
    bool empty() const { return grid_.b_values.empty() || grid_.n_values.empty(); }

    MatrixMetadata metadata;

    bool operator==(const MissMatrix&) const = default;

private:
    SweepGrid grid_;
    std::vector<std::optional<MatrixCell>> cells_; // row-major by B then N
};

struct SimulatorBackend
{
    BtbGeometry geometry;
    NoiseModel noise;
    Address base_address = kDefaultSimulationBase;
};

struct DatasetBackend
{
    std::vector<MeasurementRecord> records;
    std::string label = "csv";
};

using Backend = std::variant<SimulatorBackend, DatasetBackend>;

struct SweepOptions
{
    /// Worker threads for simulator cells; 0 picks hardware concurrency.
    unsigned threads = 0;
};

/// Fills every grid cell from the backend. A dataset backend must cover
/// every cell; the error names the first missing (B, N).
MissMatrix run_sweep(const Backend& backend, const SweepGrid& grid, const SweepOptions& options = {});

/// Seed used for the noise draw of one cell.
std::uint64_t cell_seed(std::uint64_t seed, std::uint64_t b, std::uint64_t n);

struct IngestResult
{
    std::vector<MeasurementRecord> records;
    std::vector<std::string> warnings;
};

/// Parses the `B,N,C` line protocol. `#` lines are comments, except
/// `# measure_rounds=k` which applies to the records that follow. An
/// optional `B,N,C` header may precede the data. Throws std::runtime_error
/// naming the line number of a malformed line.
IngestResult ingest_csv(std::istream& in, const std::string& backend_label = "csv");
IngestResult ingest_csv_file(const std::string& path, const std::string& backend_label = "csv");

/// Line-protocol text for the records; ingest_csv reads it back exactly.
std::string to_line_protocol(const std::vector<MeasurementRecord>& records);

/// Present cells as records. Throws if a cell has no integral count.
std::vector<MeasurementRecord> matrix_records(const MissMatrix& matrix);

/// Union of the inputs. Conflicting cells take the mean rate and leave a
/// note in the metadata. Throws std::invalid_argument if round settings differ.
MissMatrix merge(const std::vector<MissMatrix>& matrices);

} // namespace btbrecon
