#include "btbrecon/btb_sim.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>

namespace btbrecon {

namespace {

constexpr std::uint64_t low_bits(unsigned count)
{
    return count >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << count) - 1;
}

// Keeps simulated state allocations sane (64M entries).
constexpr std::uint64_t kMaxSimulatedEntries = std::uint64_t{1} << 26;

} // namespace

std::string to_string(Replacement r)
{
    switch (r) {
    case Replacement::Lru: return "lru";
    case Replacement::Fifo: return "fifo";
    case Replacement::Random: return "random";
    }
    return "lru";
}

Replacement parse_replacement(const std::string& name)
{
    if (name == "lru") return Replacement::Lru;
    if (name == "fifo") return Replacement::Fifo;
    if (name == "random") return Replacement::Random;
    throw std::invalid_argument("unknown replacement policy '" + name + "' (expected lru|fifo|random)");
}

BtbGeometry BtbGeometry::from_sets(std::uint64_t sets, unsigned ways, unsigned index_lo,
                                   Replacement replacement)
{
    if (!is_power_of_two(sets))
        throw std::invalid_argument("set count must be a power of two");
    if (sets == 1)
        throw std::invalid_argument("at least one index bit (2 sets) is required");
    BtbGeometry g;
    g.ways = ways;
    g.index_lo = index_lo;
    g.index_hi = index_lo + log2_floor(sets) - 1;
    g.replacement = replacement;
    g.validate();
    return g;
}

void BtbGeometry::validate() const
{
    if (ways < 1)
        throw std::invalid_argument("ways must be >= 1");
    if (index_lo > index_hi)
        throw std::invalid_argument("index_lo must be <= index_hi");
    if (index_hi >= kVirtualAddressBits)
        throw std::invalid_argument("index_hi must be < 48");
    if (tag_hi < index_hi || tag_hi >= 64)
        throw std::invalid_argument("tag_hi must lie in [index_hi, 63]");
}

AddressDecomposition decompose(const BtbGeometry& geometry, Address pc)
{
    AddressDecomposition parts;
    parts.unused_low = pc & low_bits(geometry.index_lo);
    parts.index = (pc >> geometry.index_lo) & low_bits(geometry.index_bits());
    parts.tag = geometry.tag_hi == geometry.index_hi
                    ? 0
                    : (pc >> (geometry.index_hi + 1)) & low_bits(geometry.tag_hi - geometry.index_hi);
    return parts;
}

Address recompose(const BtbGeometry& geometry, const AddressDecomposition& parts)
{
    Address pc = parts.unused_low;
    pc |= parts.index << geometry.index_lo;
    if (geometry.tag_hi > geometry.index_hi)
        pc |= parts.tag << (geometry.index_hi + 1);
    return pc;
}

BtbState::BtbState(const BtbGeometry& geometry)
    : geometry_(geometry),
      index_mask_(0),
      low_mask_(0),
      tag_mask_(0),
      rng_(geometry.seed)
{
    geometry_.validate();
    if (geometry_.capacity() > kMaxSimulatedEntries)
        throw std::invalid_argument("geometry too large to simulate");
    index_mask_ = geometry_.sets() - 1;
    low_mask_ = low_bits(geometry_.index_lo);
    tag_mask_ = low_bits(geometry_.tag_hi - geometry_.index_hi);
    ways_.resize(geometry_.capacity());
}

std::uint64_t BtbState::entry_key(Address pc) const
{
    const std::uint64_t tag =
        geometry_.tag_hi == geometry_.index_hi ? 0 : (pc >> (geometry_.index_hi + 1)) & tag_mask_;
    return (tag << geometry_.index_lo) | (pc & low_mask_);
}

AccessResult BtbState::access(Address pc)
{
    ++accesses_;
    ++tick_;
    const std::uint64_t set = (pc >> geometry_.index_lo) & index_mask_;
    const std::uint64_t key = entry_key(pc);
    const std::size_t first = static_cast<std::size_t>(set * geometry_.ways);
    const std::size_t last = first + geometry_.ways;

    for (std::size_t i = first; i < last; ++i) {
        if (ways_[i].valid && ways_[i].key == key) {
            if (geometry_.replacement == Replacement::Lru)
                ways_[i].stamp = tick_;
            return AccessResult::Hit;
        }
    }

    ++misses_;
    std::size_t slot = last;
    for (std::size_t i = first; i < last; ++i) {
        if (!ways_[i].valid) {
            slot = i;
            break;
        }
    }
    if (slot == last)
        slot = pick_victim(first);
    ways_[slot] = Way{key, tick_, true};
    assert(occupancy(set) <= geometry_.ways);
    return AccessResult::Miss;
}

std::size_t BtbState::pick_victim(std::size_t first)
{
    if (geometry_.replacement == Replacement::Random) {
        std::uniform_int_distribution<std::size_t> pick(0, geometry_.ways - 1);
        return first + pick(rng_);
    }
    // LRU and FIFO both evict the smallest stamp; they differ only in
    // whether hits refresh it.
    std::size_t victim = first;
    for (std::size_t i = first + 1; i < first + geometry_.ways; ++i)
        if (ways_[i].stamp < ways_[victim].stamp) victim = i;
    return victim;
}

std::size_t BtbState::occupancy(std::uint64_t set) const
{
    const auto begin = ways_.begin() + static_cast<std::ptrdiff_t>(set * geometry_.ways);
    return static_cast<std::size_t>(
        std::count_if(begin, begin + geometry_.ways, [](const Way& w) { return w.valid; }));
}

std::vector<std::uint64_t> BtbState::set_entries(std::uint64_t set) const
{
    std::vector<Way> live;
    const auto begin = ways_.begin() + static_cast<std::ptrdiff_t>(set * geometry_.ways);
    std::copy_if(begin, begin + geometry_.ways, std::back_inserter(live),
                 [](const Way& w) { return w.valid; });
    std::sort(live.begin(), live.end(), [](const Way& a, const Way& b) { return a.stamp > b.stamp; });
    std::vector<std::uint64_t> keys;
    keys.reserve(live.size());
    for (const Way& w : live) keys.push_back(w.key);
    return keys;
}

MeasurementRecord replay(const BtbGeometry& geometry, std::span<const Address> trace,
                         unsigned warmup_rounds, unsigned measure_rounds)
{
    if (trace.empty())
        throw std::invalid_argument("empty gadget");
    if (measure_rounds < 1)
        throw std::invalid_argument("measure_rounds must be >= 1");

    BtbState state(geometry);
    for (unsigned round = 0; round < warmup_rounds; ++round)
        for (Address pc : trace) state.access(pc);

    const std::uint64_t before = state.misses();
    for (unsigned round = 0; round < measure_rounds; ++round)
        for (Address pc : trace) state.access(pc);

    MeasurementRecord record;
    record.branch_count = trace.size();
    record.mispredictions = state.misses() - before;
    record.measure_rounds = measure_rounds;
    record.backend = "sim";
    return record;
}

MeasurementRecord inject_noise(const MeasurementRecord& record, const NoiseModel& model)
{
    if (model.lambda < 0.0)
        throw std::invalid_argument("noise lambda must be >= 0");
    if (!model.enabled || model.lambda == 0.0)
        return record;

    std::mt19937_64 rng(model.seed);
    const double mean = model.lambda * static_cast<double>(record.branch_count) *
                        static_cast<double>(record.measure_rounds);
    std::poisson_distribution<std::uint64_t> extra(mean);
    MeasurementRecord noisy = record;
    noisy.mispredictions += extra(rng);
    return noisy;
}

} // namespace btbrecon
