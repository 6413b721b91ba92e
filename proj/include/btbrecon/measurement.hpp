#pragma once

#include <cstdint>
#include <string>

namespace btbrecon {

using Address = std::uint64_t;

/// One (B, N, C) observation. The miss rate is derived from the counts so the
/// record stays exact; it can exceed 1.0 on hardware (interrupt noise).
struct MeasurementRecord
{
    std::uint64_t branch_count = 0;
    std::uint64_t stride = 0;
    std::uint64_t mispredictions = 0;
    std::uint32_t measure_rounds = 1;
    std::string backend;

    double miss_rate() const
    {
        return static_cast<double>(mispredictions) /
               (static_cast<double>(branch_count) * static_cast<double>(measure_rounds));
    }

    bool exceeds_unity() const { return mispredictions > branch_count * measure_rounds; }

    bool operator==(const MeasurementRecord&) const = default;
};

bool is_power_of_two(std::uint64_t v);

/// floor(log2(v)); v must be non-zero.
unsigned log2_floor(std::uint64_t v);

} // namespace btbrecon
