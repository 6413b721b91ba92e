#pragma once

// Recovers BTB parameters from a miss-rate matrix.
//
// Every rule works on stride columns N = 2^j:
//  * index_lo  - the first column pair where the large-B band mean jumps; a
//                stride of 2^(lo+1) pins index bit lo and halves usable sets.
//  * capacity  - the largest B still buffered in the column N = 2^index_lo.
//  * index_hi  - the start of the plateau of mutually similar columns; once
//                every index bit is pinned only one set is used.
//  * ways      - in plateau (single-set) columns, the largest buffered B.
//
// Input rates above 1.0 are clamped to 1.0 before any threshold is applied.

#include "btbrecon/sweep.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace btbrecon {

struct InferenceConfig
{
    double theta_low = 0.25;       // buffered vs overflowing
    double delta_jump = 0.20;      // band-mean rise that marks an index bit
    double epsilon_similar = 0.05; // max difference for "similar" columns
    double theta_zero = 0.05;      // treated as zero in the single-set regime
    double capacity_band = 0.5;    // band rows: B >= capacity_band * max B
    /// Cells per plateau column allowed to sit above the plateau median by
    /// more than epsilon_similar. Interrupt noise only adds misses, so a
    /// lone high cell is attributed to noise. 0 gives the strict pairwise test.
    unsigned plateau_outliers = 1;

    /// Throws std::invalid_argument if a threshold is outside [0, 1] or
    /// delta_jump <= epsilon_similar.
    void validate() const;

    bool operator==(const InferenceConfig&) const = default;
};

struct CellRef
{
    std::uint64_t b = 0;
    std::uint64_t n = 0;
    double rate = 0.0; // clamped value that was compared

    bool operator==(const CellRef&) const = default;
};

struct Evidence
{
    std::string conclusion;
    std::vector<CellRef> cells;
    std::vector<std::string> comparisons;
    std::vector<std::string> notes;
};

/// The matrix does not carry the signature a rule needs.
class IndeterminateError : public std::runtime_error
{
public:
    IndeterminateError(const std::string& what, Evidence evidence)
        : std::runtime_error(what), evidence_(std::move(evidence))
    {
    }
    const Evidence& evidence() const { return evidence_; }

private:
    Evidence evidence_;
};

struct BitFinding
{
    unsigned bit = 0;
    Evidence evidence;
};

struct CapacityFinding
{
    std::uint64_t entries = 0;   // nearest power of two
    std::uint64_t raw = 0;       // grid value
    bool grid_limited = false;   // still buffered at the largest B probed
    std::uint64_t reference_stride = 0;
    Evidence evidence;
};

struct WaysFinding
{
    unsigned ways = 0;
    bool tie = false;
    std::map<unsigned, unsigned> votes; // ways value -> number of columns
    Evidence evidence;
};

struct ConsistencyVerdict
{
    bool consistent = false;
    std::uint64_t sets = 0;
    std::uint64_t product = 0; // sets * ways
    std::vector<std::string> suggestions;
};

struct InferenceReport
{
    std::optional<CapacityFinding> capacity;
    std::optional<unsigned> index_lo;
    std::optional<unsigned> index_hi;
    std::optional<std::uint64_t> sets;
    std::optional<unsigned> ways;
    std::optional<ConsistencyVerdict> verdict;
    std::map<std::string, std::string> indeterminate; // field -> reason
    std::vector<Evidence> evidence;
    std::vector<std::string> assumptions;
    InferenceConfig config;

    /// All four parameters determined, capacity not grid-limited, and
    /// sets * ways == capacity.
    bool complete() const;
};

BitFinding infer_index_lo(const MissMatrix& matrix, const InferenceConfig& cfg = {});
CapacityFinding infer_capacity(const MissMatrix& matrix, unsigned index_lo, const InferenceConfig& cfg = {});
BitFinding infer_index_hi(const MissMatrix& matrix, const InferenceConfig& cfg = {});
WaysFinding infer_ways(const MissMatrix& matrix, unsigned index_hi, const InferenceConfig& cfg = {});
ConsistencyVerdict cross_check(std::uint64_t capacity, unsigned index_lo, unsigned index_hi, unsigned ways);

/// Runs the four rules and the cross check. Steps whose inputs are missing
/// are reported as indeterminate instead of aborting the rest.
InferenceReport infer_all(const MissMatrix& matrix, const InferenceConfig& cfg = {});

} // namespace btbrecon
