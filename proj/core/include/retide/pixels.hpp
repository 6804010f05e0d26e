#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "retide/rounding.hpp"
#include "retide/tensor.hpp"

namespace retide {

// Interleaved <-> planar conversion, the only layout change in the system.
// 8-bit samples map to [0,1] as v/255; the inverse rounds half-to-even.

inline TensorF32 interleaved_u8_to_planar(const std::uint8_t* px, int w, int h, int c) {
  TensorF32 t(1, c, h, w);
  const float inv = 1.0f / 255.0f;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        t.at(0, ch, y, x) = float(px[(std::size_t(y) * w + x) * c + ch]) * inv;
  return t;
}

inline TensorF32 interleaved_f32_to_planar(const std::uint8_t* bytes, int w, int h, int c) {
  TensorF32 t(1, c, h, w);
  const float* px = reinterpret_cast<const float*>(bytes);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        t.at(0, ch, y, x) = px[(std::size_t(y) * w + x) * c + ch];
  return t;
}

inline std::vector<std::uint8_t> planar_to_interleaved_u8(const TensorF32& t) {
  if (t.n != 1) throw std::invalid_argument("planar_to_interleaved_u8: batch must be 1");
  std::vector<std::uint8_t> out(std::size_t(t.w) * t.h * t.c);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int ch = 0; ch < t.c; ++ch) {
        const std::int64_t v = std::int64_t(round_half_even(double(t.at(0, ch, y, x)) * 255.0));
        out[(std::size_t(y) * t.w + x) * t.c + ch] =
            std::uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
      }
  return out;
}

inline std::vector<std::uint8_t> planar_to_interleaved_f32(const TensorF32& t) {
  if (t.n != 1) throw std::invalid_argument("planar_to_interleaved_f32: batch must be 1");
  std::vector<std::uint8_t> out(std::size_t(t.w) * t.h * t.c * 4);
  float* px = reinterpret_cast<float*>(out.data());
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int ch = 0; ch < t.c; ++ch)
        px[(std::size_t(y) * t.w + x) * t.c + ch] = t.at(0, ch, y, x);
  return out;
}

} // namespace retide
