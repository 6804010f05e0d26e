#include "retide/tensor.hpp"

#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "retide/errors.hpp"

namespace retide {

namespace {

void check_dims(int n, int c, int h, int w) {
  if (n < 1 || c < 0 || h < 1 || w < 1)
    throw std::invalid_argument("tensor dims must be >= 1 (channels >= 0)");
}

} // namespace

TensorF32::TensorF32(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
  check_dims(n_, c_, h_, w_);
  data.assign(std::size_t(n) * c * h * w, 0.0f);
}

TensorI8::TensorI8(int n_, int c_, int h_, int w_, int scale_exp_)
    : n(n_), c(c_), h(h_), w(w_), scale_exp(scale_exp_) {
  check_dims(n_, c_, h_, w_);
  if (scale_exp < kScaleExpMin || scale_exp > kScaleExpMax)
    throw std::invalid_argument("scale_exp out of sanity range");
  data.assign(std::size_t(n) * c * h * w, 0);
}

TensorF32 pad_reflect(const TensorF32& t, int top, int bottom, int left, int right) {
  if (top < 0 || bottom < 0 || left < 0 || right < 0)
    throw std::invalid_argument("pad_reflect: negative pad");
  if (top >= t.h || bottom >= t.h || left >= t.w || right >= t.w)
    throw std::invalid_argument("pad_reflect: pad must be smaller than the padded dimension");

  TensorF32 out(t.n, t.c, t.h + top + bottom, t.w + left + right);
  for (int in = 0; in < t.n; ++in)
    for (int ic = 0; ic < t.c; ++ic)
      for (int oy = 0; oy < out.h; ++oy) {
        int sy = oy - top;
        if (sy < 0) sy = -sy;                      // reflect, edge not repeated
        if (sy >= t.h) sy = 2 * (t.h - 1) - sy;
        for (int ox = 0; ox < out.w; ++ox) {
          int sx = ox - left;
          if (sx < 0) sx = -sx;
          if (sx >= t.w) sx = 2 * (t.w - 1) - sx;
          out.at(in, ic, oy, ox) = t.at(in, ic, sy, sx);
        }
      }
  return out;
}

TensorF32 crop(const TensorF32& t, const Rect& r) {
  if (r.x < 0 || r.y < 0 || r.w < 1 || r.h < 1 || r.x + r.w > t.w || r.y + r.h > t.h)
    throw std::invalid_argument("crop: rect out of bounds");
  TensorF32 out(t.n, t.c, r.h, r.w);
  for (int in = 0; in < t.n; ++in)
    for (int ic = 0; ic < t.c; ++ic)
      for (int oy = 0; oy < r.h; ++oy)
        std::memcpy(&out.at(in, ic, oy, 0), &t.at(in, ic, r.y + oy, r.x),
                    std::size_t(r.w) * sizeof(float));
  return out;
}

template <typename T>
static T concat_impl(const T& a, const T& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat_channels: spatial/batch mismatch");
  T out = a;
  out.c = a.c + b.c;
  out.data.resize(std::size_t(out.n) * out.c * out.h * out.w);
  const std::size_t plane = a.plane();
  for (int in = 0; in < a.n; ++in) {
    auto* dst = out.data.data() + std::size_t(in) * out.c * plane;
    std::memcpy(dst, a.data.data() + std::size_t(in) * a.c * plane,
                std::size_t(a.c) * plane * sizeof(a.data[0]));
    std::memcpy(dst + std::size_t(a.c) * plane,
                b.data.data() + std::size_t(in) * b.c * plane,
                std::size_t(b.c) * plane * sizeof(b.data[0]));
  }
  return out;
}

TensorF32 concat_channels(const TensorF32& a, const TensorF32& b) {
  if (a.c == 0) return b;
  if (b.c == 0) return a;
  return concat_impl(a, b);
}

TensorI8 concat_channels(const TensorI8& a, const TensorI8& b) {
  if (a.scale_exp != b.scale_exp)
    throw std::invalid_argument("concat_channels: operands must share scale_exp");
  if (a.c == 0) return b;
  if (b.c == 0) return a;
  return concat_impl(a, b);
}

// ---- RTDT container ----

namespace {

constexpr char kRtdtMagic[4] = {'R', 'T', 'D', 'T'};

void put_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IncompleteMessage("RTDT: truncated header");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void write_header(std::ostream& os, std::uint8_t dtype, std::int8_t scale_exp, int n, int c,
                  int h, int w) {
  os.write(kRtdtMagic, 4);
  os.put(char(dtype));
  os.put(char(scale_exp));
  os.put(0);
  os.put(0); // u16 reserved
  put_u32le(os, std::uint32_t(n));
  put_u32le(os, std::uint32_t(c));
  put_u32le(os, std::uint32_t(h));
  put_u32le(os, std::uint32_t(w));
}

} // namespace

void write_rtdt(std::ostream& os, const TensorF32& t) {
  write_header(os, 0, 0, t.n, t.c, t.h, t.w);
  // payload: f32 little-endian; this build targets little-endian hosts
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           std::streamsize(t.data.size() * sizeof(float)));
}

void write_rtdt(std::ostream& os, const TensorI8& t) {
  write_header(os, 1, std::int8_t(t.scale_exp), t.n, t.c, t.h, t.w);
  os.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size()));
}

RtdtTensor read_rtdt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kRtdtMagic, 4) != 0)
    throw ProtocolViolation("RTDT: bad magic");
  int dtype = is.get();
  int scale_exp = static_cast<std::int8_t>(is.get());
  is.get();
  is.get(); // reserved
  std::uint32_t n = get_u32le(is), c = get_u32le(is), h = get_u32le(is), w = get_u32le(is);
  if (n < 1 || c < 1 || h < 1 || w < 1)
    throw ProtocolViolation("RTDT: bad dims");
  RtdtTensor out;
  const std::size_t count = std::size_t(n) * c * h * w;
  if (dtype == 0) {
    out.is_f32 = true;
    out.f32 = TensorF32(int(n), int(c), int(h), int(w));
    is.read(reinterpret_cast<char*>(out.f32.data.data()), std::streamsize(count * 4));
  } else if (dtype == 1) {
    out.is_f32 = false;
    out.i8 = TensorI8(int(n), int(c), int(h), int(w), scale_exp);
    is.read(reinterpret_cast<char*>(out.i8.data.data()), std::streamsize(count));
  } else {
    throw ProtocolViolation("RTDT: unknown dtype " + std::to_string(dtype));
  }
  if (!is) throw IncompleteMessage("RTDT: truncated payload");
  return out;
}

} // namespace retide
