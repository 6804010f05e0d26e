#pragma once

#include <cmath>
#include <cstdint>

namespace retide {

// Round-half-to-even is the single tie rule used everywhere a real value is
// mapped to an integer grid. Both the float simulator and the integer engine
// depend on these two functions agreeing on every representable input.

// Exact for |v| < 2^53 (v - floor(v) is then computed without rounding error).
inline double round_half_even(double v) {
  double f = std::floor(v);
  double frac = v - f;
  if (frac > 0.5) return f + 1.0;
  if (frac < 0.5) return f;
  return (std::fmod(f, 2.0) == 0.0) ? f : f + 1.0;
}

// round_half_even(a / 2^shift) in pure integer arithmetic, shift >= 0.
inline std::int64_t shift_round_half_even(std::int64_t a, int shift) {
  if (shift <= 0) return a;
  const std::int64_t half = std::int64_t(1) << (shift - 1);
  const std::int64_t mask = (std::int64_t(1) << shift) - 1;
  std::int64_t q = a >> shift; // floor division
  const std::int64_t rem = a & mask;
  if (rem > half) {
    ++q;
  } else if (rem == half && (q & 1)) {
    ++q;
  }
  return q;
}

inline std::int8_t clamp_i8(std::int64_t v) {
  if (v < -128) return -128;
  if (v > 127) return 127;
  return static_cast<std::int8_t>(v);
}

} // namespace retide
