#pragma once

// Probe gadgets: B unconditional indirect jumps laid out N bytes apart.
//
//   block k (offset k*N):  adr x0, next<k+1>     ; +0
//                          br  x0                ; +4  <- the traced branch
//                          nop x (N/4 - 2)
//   next<B> (offset B*N):  ret

#include "btbrecon/measurement.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace btbrecon {

inline constexpr Address kDefaultSimulationBase = 0x40000000;
inline constexpr unsigned kDefaultAlignmentExponent = 21;
inline constexpr std::uint64_t kBranchOffset = 4;
inline constexpr std::uint64_t kMinStride = 8;

struct GadgetSpec
{
    std::uint64_t branch_count = 1;
    std::uint64_t stride = kMinStride;
    Address base_address = kDefaultSimulationBase;
    unsigned alignment_exponent = kDefaultAlignmentExponent;

    std::uint64_t footprint() const { return branch_count * stride + 4; }
};

/// Every invariant violation of `spec`; empty when the spec is usable.
std::vector<std::string> validate_spec(const GadgetSpec& spec);

/// PCs of the indirect branches: base + k*N + 4 for k in [0, B).
/// Throws std::invalid_argument listing the violations.
std::vector<Address> build_trace(const GadgetSpec& spec);

/// Largest stride whose next label an `adr` can still reach (+/-1 MiB).
inline constexpr std::uint64_t kMaxAdrStride = std::uint64_t{1} << 19;
/// Largest stride the far form (add x0, x0, #imm12, lsl #12) can encode.
inline constexpr std::uint64_t kMaxFarStride = std::uint64_t{1} << 23;

struct EmitOptions
{
    std::string symbol = "btb_gadget";
    /// Blocks of at most this many bytes get their nops written out;
    /// larger strides rely on the alignment directive alone.
    std::uint64_t explicit_nop_limit = 256;
};

/// GNU-assembler text for the gadget. Deterministic for a given spec.
std::string emit_asm(const GadgetSpec& spec, const EmitOptions& options = {});

} // namespace btbrecon
