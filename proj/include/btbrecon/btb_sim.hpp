#pragma once

// Set-associative branch target buffer model used as ground truth for the
// reverse-engineering pipeline.

#include "btbrecon/measurement.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace btbrecon {

enum class Replacement { Lru, Fifo, Random };

std::string to_string(Replacement r);
Replacement parse_replacement(const std::string& name);

/// Highest virtual-address bit the model considers.
inline constexpr unsigned kVirtualAddressBits = 48;

/// Hypothesis about the BTB organisation. Bit positions are 0-based
/// (LSB = bit 0). Capacity is always derived, never stored.
struct BtbGeometry
{
    unsigned ways = 1;
    unsigned index_lo = 0;
    unsigned index_hi = 0;
    Replacement replacement = Replacement::Lru;
    std::uint64_t seed = 0; // RANDOM replacement only
    unsigned tag_hi = kVirtualAddressBits - 1;

    /// Builds a geometry from a power-of-two set count.
    static BtbGeometry from_sets(std::uint64_t sets, unsigned ways, unsigned index_lo,
                                 Replacement replacement = Replacement::Lru);

    unsigned index_bits() const { return index_hi - index_lo + 1; }
    std::uint64_t sets() const { return std::uint64_t{1} << index_bits(); }
    std::uint64_t capacity() const { return sets() * ways; }

    /// Throws std::invalid_argument describing the first violated invariant.
    void validate() const;

    bool operator==(const BtbGeometry&) const = default;
};

struct AddressDecomposition
{
    std::uint64_t unused_low = 0; // bits [0, index_lo)
    std::uint64_t index = 0;      // bits [index_lo, index_hi]
    std::uint64_t tag = 0;        // bits (index_hi, tag_hi]

    bool operator==(const AddressDecomposition&) const = default;
};

AddressDecomposition decompose(const BtbGeometry& geometry, Address pc);

/// Inverse of decompose for the bits at or below tag_hi.
Address recompose(const BtbGeometry& geometry, const AddressDecomposition& parts);

enum class AccessResult { Hit, Miss };

/// Mutable BTB contents for one geometry. Entries are identified by the tag
/// together with the unused low bits, so two distinct branch PCs never share
/// an entry unless tag_hi truncates the bits that tell them apart.
class BtbState
{
public:
    explicit BtbState(const BtbGeometry& geometry);

    AccessResult access(Address pc);

    const BtbGeometry& geometry() const { return geometry_; }
    std::uint64_t misses() const { return misses_; }
    std::uint64_t accesses() const { return accesses_; }

    std::size_t occupancy(std::uint64_t set) const;

    /// Entry keys of one set, newest first: most recently used for LRU,
    /// most recently inserted for FIFO and RANDOM.
    std::vector<std::uint64_t> set_entries(std::uint64_t set) const;

    /// The key an address is stored under (tag and low bits, index removed).
    std::uint64_t entry_key(Address pc) const;

private:
    struct Way
    {
        std::uint64_t key = 0;
        std::uint64_t stamp = 0;
        bool valid = false;
    };

    std::size_t pick_victim(std::size_t first);

    BtbGeometry geometry_;
    std::uint64_t index_mask_;
    std::uint64_t low_mask_;
    std::uint64_t tag_mask_;
    std::vector<Way> ways_;
    std::uint64_t tick_ = 0;
    std::uint64_t misses_ = 0;
    std::uint64_t accesses_ = 0;
    std::mt19937_64 rng_;
};

/// Runs `trace` warmup_rounds times (misses discarded) and then
/// measure_rounds times, counting misses. The returned record has stride 0;
/// callers that know the gadget stride fill it in.
MeasurementRecord replay(const BtbGeometry& geometry, std::span<const Address> trace,
                         unsigned warmup_rounds = 10, unsigned measure_rounds = 1);

struct NoiseModel
{
    bool enabled = false;
    double lambda = 0.0;
    std::uint64_t seed = 0;

    static NoiseModel off() { return {}; }
    static NoiseModel poisson(double lambda, std::uint64_t seed) { return {true, lambda, seed}; }
};

/// Adds Poisson(lambda * B * measure_rounds) spurious mispredictions, the
/// way interrupts inflate hardware counts.
MeasurementRecord inject_noise(const MeasurementRecord& record, const NoiseModel& model);

} // namespace btbrecon
