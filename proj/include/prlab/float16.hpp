// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace prlab {

// IEEE binary16 emulated on fp32 storage. A tensor of the emulated dtype
// holds ordinary floats, every one of which lies exactly on the binary16
// value lattice: round-to-nearest-even conversion, subnormals kept,
// magnitudes that round past 65504 become +/-inf, and every NaN collapses
// to one canonical quiet NaN.

inline constexpr float kF16Max = 65504.0f;            // largest finite binary16
inline constexpr uint16_t kF16QuietNaN = 0x7E00u;     // canonical 16-bit quiet NaN
inline constexpr uint32_t kF32QuietNaNBits = 0x7FC00000u;

inline float canonical_nan() { return std::bit_cast<float>(kF32QuietNaNBits); }

// Round-to-nearest-even conversion of an fp32 value to its 16-bit encoding.
uint16_t f16_encode(float x);

// Exact widening of a 16-bit encoding back to fp32. NaN payloads collapse
// to the canonical quiet NaN.
float f16_decode(uint16_t h);

// Nearest binary16 value of x, returned as fp32. This is the hot path of
// every emulated kernel, so it rounds directly on the fp32 representation
// instead of going through the 16-bit encoding; it agrees bit-for-bit with
// f16_decode(f16_encode(x)) for every input.
inline float round16(float x) {
  uint32_t u = std::bit_cast<uint32_t>(x);
  const uint32_t abs = u & 0x7FFFFFFFu;
  if (abs >= 0x38800000u) {  // |x| >= 2^-14: the normal binary16 range
    if (abs >= 0x477FF000u) {  // rounds past 65504: overflow, inf, NaN
      if (abs > 0x7F800000u) return std::bit_cast<float>(kF32QuietNaNBits);
      return std::bit_cast<float>((u & 0x80000000u) | 0x7F800000u);
    }
    // Round-to-nearest-even on the low 13 mantissa bits.
    u += 0xFFFu + ((u >> 13) & 1u);
    return std::bit_cast<float>(u & 0xFFFFE000u);
  }
  // |x| < 2^-14: the binary16 subnormal lattice, spacing 2^-24. Scale into
  // integer range and let fp32 addition perform the round-to-nearest-even.
  const float a = std::bit_cast<float>(abs) * 0x1.0p24f;
  const float r = ((a + 0x1.0p23f) - 0x1.0p23f) * 0x1.0p-24f;
  return std::bit_cast<float>(std::bit_cast<uint32_t>(r) | (u & 0x80000000u));
}

// True when x is already representable in binary16 (bitwise fixpoint of
// round16; holds for the canonical NaN as well).
inline bool is_f16_value(float x) {
  return std::bit_cast<uint32_t>(round16(x)) == std::bit_cast<uint32_t>(x);
}

}  // namespace prlab
