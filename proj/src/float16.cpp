// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/float16.hpp"

namespace prlab {

uint16_t f16_encode(float x) {
  const uint32_t bits = std::bit_cast<uint32_t>(x);
  const uint32_t abs = bits & 0x7FFFFFFFu;
  const auto sign = static_cast<uint16_t>((bits >> 16) & 0x8000u);

  if (abs > 0x7F800000u) return kF16QuietNaN;      // any NaN, sign dropped
  if (abs >= 0x477FF000u) return sign | 0x7C00u;   // rounds past 65504, or inf
  if (abs <= 0x33000000u) return sign;             // rounds to zero (2^-25 ties to even)

  uint32_t exp = abs >> 23;
  uint32_t man = abs & 0x7FFFFFu;
  uint32_t shift;
  if (exp > 0x70u) {
    exp -= 0x70u;          // normal in binary16
    shift = 13;
  } else {
    man |= 0x800000u;      // subnormal: shift implicit bit into the mantissa
    shift = 0x7Eu - exp;
    exp = 0;
  }

  const uint32_t half = 1u << (shift - 1);
  const uint32_t rem = man & ((1u << shift) - 1u);
  man >>= shift;
  if (rem > half || (rem == half && (man & 1u))) ++man;
  // A mantissa carry bumps the exponent; the overflow branch above
  // guarantees this never reaches the inf encoding.
  return sign | static_cast<uint16_t>((exp << 10) + man);
}

float f16_decode(uint16_t h) {
  const uint32_t sign = (static_cast<uint32_t>(h) & 0x8000u) << 16;
  uint32_t exp = (h >> 10) & 0x1Fu;
  uint32_t man = h & 0x3FFu;

  if (exp == 0x1Fu) {
    if (man != 0) return std::bit_cast<float>(kF32QuietNaNBits);
    return std::bit_cast<float>(sign | 0x7F800000u);
  }
  if (exp == 0) {
    if (man == 0) return std::bit_cast<float>(sign);  // +/-0
    exp = 113;
    while (!(man & 0x400u)) {  // renormalize the subnormal
      man <<= 1;
      --exp;
    }
    man &= 0x3FFu;
  } else {
    exp += 112;
  }
  return std::bit_cast<float>(sign | (exp << 23) | (man << 13));
}

}  // namespace prlab
