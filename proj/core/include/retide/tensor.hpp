#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace retide {

// Planar NCHW tensors. Layout is fixed project-wide; interleaved pixel data is
// converted at image-I/O and wire boundaries only. Tensors are immutable by
// convention once filled and safe to share across threads.

struct Rect {
  int x = 0, y = 0; // top-left offsets
  int w = 1, h = 1; // extents, >= 1

  bool operator==(const Rect&) const = default;
};

struct TensorF32 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  TensorF32() = default;
  TensorF32(int n_, int c_, int h_, int w_);

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return std::size_t(h) * w; }
  float& at(int in, int ic, int iy, int ix) {
    return data[((std::size_t(in) * c + ic) * h + iy) * w + ix];
  }
  const float& at(int in, int ic, int iy, int ix) const {
    return data[((std::size_t(in) * c + ic) * h + iy) * w + ix];
  }
  bool same_shape(const TensorF32& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

struct TensorI8 {
  int n = 0, c = 0, h = 0, w = 0;
  int scale_exp = 0; // real value = stored * 2^scale_exp
  std::vector<std::int8_t> data;

  TensorI8() = default;
  TensorI8(int n_, int c_, int h_, int w_, int scale_exp_);

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return std::size_t(h) * w; }
  std::int8_t& at(int in, int ic, int iy, int ix) {
    return data[((std::size_t(in) * c + ic) * h + iy) * w + ix];
  }
  const std::int8_t& at(int in, int ic, int iy, int ix) const {
    return data[((std::size_t(in) * c + ic) * h + iy) * w + ix];
  }
};

constexpr int kScaleExpMin = -32;
constexpr int kScaleExpMax = 32;

// Reflection padding, edge pixel not repeated ("reflect", not "symmetric").
// Each pad must be strictly smaller than the corresponding input dimension.
TensorF32 pad_reflect(const TensorF32& t, int top, int bottom, int left, int right);

// r must lie fully inside t's h x w extent.
TensorF32 crop(const TensorF32& t, const Rect& r);

// Stacks b's channels after a's. a and b must agree on n, h, w.
TensorF32 concat_channels(const TensorF32& a, const TensorF32& b);
// Integer variant used by the quantized path; operands must share scale_exp.
TensorI8 concat_channels(const TensorI8& a, const TensorI8& b);

// RTDT container, the raw tensor format used by golden tests:
// magic "RTDT", u8 dtype (0=f32, 1=i8), i8 scale_exp, u16 reserved,
// four u32 little-endian dims (n,c,h,w), payload little-endian.
void write_rtdt(std::ostream& os, const TensorF32& t);
void write_rtdt(std::ostream& os, const TensorI8& t);
// Reads either dtype; exactly one output is filled, flag says which.
struct RtdtTensor {
  bool is_f32 = true;
  TensorF32 f32;
  TensorI8 i8;
};
RtdtTensor read_rtdt(std::istream& is);

} // namespace retide
