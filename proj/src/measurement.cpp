#include "btbrecon/measurement.hpp"

#include <bit>

namespace btbrecon {

bool is_power_of_two(std::uint64_t v)
{
    return std::has_single_bit(v);
}

unsigned log2_floor(std::uint64_t v)
{
    return static_cast<unsigned>(std::bit_width(v)) - 1;
}

} // namespace btbrecon
