#include "retide/int8_engine.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

#include "retide/rounding.hpp"

#if defined(__AVX512VNNI__)
#include <immintrin.h>
#define RETIDE_VNNI 1
#else
#define RETIDE_VNNI 0
#endif

namespace retide {

std::int8_t requantize(std::int32_t acc, int shift) {
  if (shift < 0) throw std::invalid_argument("requantize: shift must be >= 0");
  return clamp_i8(shift_round_half_even(acc, shift));
}

std::int8_t leaky_relu_i8(std::int8_t q) {
  if (q >= 0) return q;
  // multiply by 26, rounded arithmetic shift by 8
  return clamp_i8(shift_round_half_even(std::int64_t(q) * 26, 8));
}

TensorI8 leaky_relu_i8(const TensorI8& x) {
  TensorI8 out = x;
  for (auto& q : out.data) q = leaky_relu_i8(q);
  return out;
}

std::int8_t relu_i8(std::int8_t q) { return q < 0 ? std::int8_t(0) : q; }

TensorI8 relu_i8(const TensorI8& x) {
  TensorI8 out = x;
  for (auto& q : out.data) q = relu_i8(q);
  return out;
}

TensorI8 rescale_to(const TensorI8& x, int target_exp) {
  const int delta = target_exp - x.scale_exp;
  if (delta < 0)
    throw std::invalid_argument("rescale_to: target must be coarser (left shift would overflow)");
  if (delta == 0) return x;
  TensorI8 out = x;
  out.scale_exp = target_exp;
  for (auto& q : out.data) q = clamp_i8(shift_round_half_even(q, delta));
  return out;
}

namespace {

void check_conv_args_i8(const TensorI8& x, const TensorI8& w, int shift, bool strided) {
  if (w.h != 4 || w.w != 4) throw std::invalid_argument("conv2d_i8: kernel must be 4x4");
  if (x.c != w.c) throw std::invalid_argument("conv2d_i8: channel mismatch");
  if (strided && (x.h < 2 || x.w < 2 || x.h % 2 || x.w % 2))
    throw std::invalid_argument("conv2d_i8: input dims must be even and >= 2");
  if (shift < 0) throw std::invalid_argument("conv2d_i8: shift must be >= 0");
}

} // namespace

namespace detail {

bool simd_kernels_enabled() { return RETIDE_VNNI != 0; }

TensorI8 conv2d_i8_scalar(const TensorI8& x, const TensorI8& w, int shift) {
  check_conv_args_i8(x, w, shift, true);
  const int oh_n = x.h / 2, ow_n = x.w / 2, co = w.n, ci = x.c;
  TensorI8 out(x.n, co, oh_n, ow_n, x.scale_exp + w.scale_exp + shift);
  for (int in = 0; in < x.n; ++in)
    for (int oc = 0; oc < co; ++oc)
      for (int oh = 0; oh < oh_n; ++oh)
        for (int ow = 0; ow < ow_n; ++ow) {
          std::int32_t acc = 0;
          for (int ic = 0; ic < ci; ++ic)
            for (int kh = 0; kh < 4; ++kh) {
              const int ih = 2 * oh - 1 + kh;
              if (ih < 0 || ih >= x.h) continue;
              for (int kw = 0; kw < 4; ++kw) {
                const int iw = 2 * ow - 1 + kw;
                if (iw < 0 || iw >= x.w) continue;
                acc += std::int32_t(x.at(in, ic, ih, iw)) * std::int32_t(w.at(oc, ic, kh, kw));
              }
            }
          out.at(in, oc, oh, ow) = requantize(acc, shift);
        }
  return out;
}

TensorI8 deconv2d_i8_scalar(const TensorI8& x, const TensorI8& w, int shift) {
  check_conv_args_i8(x, w, shift, false);
  const int oh_n = 2 * x.h, ow_n = 2 * x.w, co = w.n, ci = x.c;
  TensorI8 out(x.n, co, oh_n, ow_n, x.scale_exp + w.scale_exp + shift);
  for (int in = 0; in < x.n; ++in)
    for (int oc = 0; oc < co; ++oc)
      for (int oh = 0; oh < oh_n; ++oh)
        for (int ow = 0; ow < ow_n; ++ow) {
          std::int32_t acc = 0;
          // oh = 2*ih - 1 + kh, ow = 2*iw - 1 + kw
          for (int kh = (oh + 1) & 1; kh < 4; kh += 2) {
            const int ih = (oh + 1 - kh) / 2;
            if (ih < 0 || ih >= x.h) continue;
            for (int kw = (ow + 1) & 1; kw < 4; kw += 2) {
              const int iw = (ow + 1 - kw) / 2;
              if (iw < 0 || iw >= x.w) continue;
              for (int ic = 0; ic < ci; ++ic)
                acc += std::int32_t(x.at(in, ic, ih, iw)) * std::int32_t(w.at(oc, ic, kh, kw));
            }
          }
          out.at(in, oc, oh, ow) = requantize(acc, shift);
        }
  return out;
}

} // namespace detail

#if RETIDE_VNNI

namespace {

// Channel-pair packing: two input channels widen to int16 and interleave as
// one 32-bit lane, so vpdpwssd accumulates both with a single instruction.
// One zero pair of margin per side realizes the zero padding without
// per-element bounds checks. Rows are grouped by input row with channel
// pairs adjacent, so the reduction loop streams memory sequentially.

// weight pair table grouped for the ic2-inner loop:
// wp[((oc * 4 + kh) * 4 + kw) * ic2n + ic2]
std::vector<std::int32_t> pack_weight_pairs(const TensorI8& w) {
  const int co = w.n, ci = w.c, ic2n = (ci + 1) / 2;
  std::vector<std::int32_t> wp(std::size_t(co) * ic2n * 16);
  for (int oc = 0; oc < co; ++oc)
    for (int kh = 0; kh < 4; ++kh)
      for (int kw = 0; kw < 4; ++kw)
        for (int ic2 = 0; ic2 < ic2n; ++ic2) {
          const std::int16_t lo = w.at(oc, 2 * ic2, kh, kw);
          const std::int16_t hi = (2 * ic2 + 1 < ci) ? w.at(oc, 2 * ic2 + 1, kh, kw) : 0;
          wp[((std::size_t(oc) * 4 + kh) * 4 + kw) * ic2n + ic2] =
              std::int32_t(std::uint16_t(lo)) | (std::int32_t(hi) << 16);
        }
  return wp;
}

inline __m512i maskload_pairs(__mmask16 m, const std::int16_t* p) {
  return _mm512_maskz_loadu_epi32(m, p);
}

// round_half_even(acc / 2^shift) for shift >= 1, branchless:
// (acc + half - 1 + floor(acc/2^shift) mod 2) >> shift. The saturating
// int32->int8 convert then realizes the clamp. Accumulators are bounded well
// below int32 max (checked at model load), so the bias add cannot overflow.
inline __m512i requant_round(__m512i acc, int shift) {
  if (shift > 0) {
    const __m512i bias = _mm512_set1_epi32((1 << (shift - 1)) - 1);
    const __m512i parity =
        _mm512_and_si512(_mm512_srai_epi32(acc, unsigned(shift)), _mm512_set1_epi32(1));
    acc = _mm512_add_epi32(_mm512_add_epi32(acc, bias), parity);
    acc = _mm512_srai_epi32(acc, unsigned(shift));
  }
  return acc;
}

inline void requant_store(std::int8_t* dst, __mmask16 m, __m512i acc, int shift) {
  _mm512_mask_cvtsepi32_storeu_epi8(dst, m, requant_round(acc, shift));
}

// requantize two vectors holding even and odd output columns, interleave and
// store 2*lanes contiguous bytes
inline void requant_store_interleaved(std::int8_t* dst, int lanes, __m512i even, __m512i odd,
                                      int shift) {
  const __m128i ev = _mm512_cvtsepi32_epi8(requant_round(even, shift));
  const __m128i ov = _mm512_cvtsepi32_epi8(requant_round(odd, shift));
  const __m128i lo = _mm_unpacklo_epi8(ev, ov);
  const __m128i hi = _mm_unpackhi_epi8(ev, ov);
  const unsigned bytes = 2u * unsigned(lanes);
  const __mmask16 mlo = __mmask16(bytes >= 16 ? 0xFFFF : ((1u << bytes) - 1));
  const __mmask16 mhi =
      __mmask16(bytes <= 16 ? 0 : (bytes == 32 ? 0xFFFF : ((1u << (bytes - 16)) - 1)));
  _mm_mask_storeu_epi8(dst, mlo, lo);
  if (mhi) _mm_mask_storeu_epi8(dst + 16, mhi, hi);
}

TensorI8 conv2d_i8_vnni(const TensorI8& x, const TensorI8& w, const std::int32_t* wp,
                        int shift) {
  check_conv_args_i8(x, w, shift, true);
  const int oh_n = x.h / 2, ow_n = x.w / 2, co = w.n, ci = x.c;
  const int ic2n = (ci + 1) / 2;
  TensorI8 out(x.n, co, oh_n, ow_n, x.scale_exp + w.scale_exp + shift);

  auto wrow = [&](int oc, int kh) { return wp + (std::size_t(oc) * 4 + kh) * 4 * ic2n; };

  // layout: [ih][parity][ic2][pair j], margins included
  const int pstride = ow_n + 2;          // pairs per packed row
  const std::size_t row_group = std::size_t(2) * ic2n * pstride; // pairs per ih
  std::vector<std::int16_t> pk(std::size_t(x.h) * row_group * 2, 0);
  auto packed_row = [&](int ih, int parity, int ic2) {
    return pk.data() + ((std::size_t(ih) * 2 + parity) * ic2n + ic2) * pstride * 2;
  };


  for (int in = 0; in < x.n; ++in) {
    for (int ic2 = 0; ic2 < ic2n; ++ic2) {
      const int c0 = 2 * ic2, c1 = 2 * ic2 + 1;
      const bool has_c1 = c1 < ci;
      for (int ih = 0; ih < x.h; ++ih) {
        const std::int8_t* r0 = &x.at(in, c0, ih, 0);
        const std::int8_t* r1 = has_c1 ? &x.at(in, c1, ih, 0) : nullptr;
        std::int16_t* pe = packed_row(ih, 0, ic2);
        std::int16_t* po = packed_row(ih, 1, ic2);
        for (int j = 0; j < ow_n; ++j) {
          pe[2 * (j + 1)] = r0[2 * j];
          pe[2 * (j + 1) + 1] = r1 ? r1[2 * j] : std::int16_t(0);
          po[2 * (j + 1)] = r0[2 * j + 1];
          po[2 * (j + 1) + 1] = r1 ? r1[2 * j + 1] : std::int16_t(0);
        }
      }
    }

    for (int oh = 0; oh < oh_n; ++oh) {
      const int kh_lo = std::max(0, 1 - 2 * oh);
      const int kh_hi = std::min(4, x.h - 2 * oh + 1); // ih = 2*oh-1+kh < h
      for (int oc = 0; oc < co; oc += 2) {
        const bool two = oc + 1 < co;
        for (int j0 = 0; j0 < ow_n; j0 += 16) {
          const int lanes = std::min(16, ow_n - j0);
          const __mmask16 m = __mmask16((lanes == 16) ? 0xFFFF : ((1u << lanes) - 1));
          __m512i a0 = _mm512_setzero_si512();
          __m512i a1 = _mm512_setzero_si512();
          for (int kh = kh_lo; kh < kh_hi; ++kh) {
            const int ih = 2 * oh - 1 + kh;
            const std::int32_t* w0 = wrow(oc, kh);
            const std::int32_t* w1 = two ? wrow(oc + 1, kh) : w0;
            const std::int16_t* pe = packed_row(ih, 0, 0) + 2 * j0;
            const std::int16_t* po = packed_row(ih, 1, 0) + 2 * j0;
            for (int ic2 = 0; ic2 < ic2n; ++ic2) {
              // taps at iw = 2*ow-1+kw with one-pair margin:
              //   kw0 -> po[j], kw1 -> pe[j+1], kw2 -> po[j+1], kw3 -> pe[j+2]
              const __m512i xv0 = maskload_pairs(m, po);
              const __m512i xv1 = maskload_pairs(m, pe + 2);
              const __m512i xv2 = maskload_pairs(m, po + 2);
              const __m512i xv3 = maskload_pairs(m, pe + 4);
              a0 = _mm512_dpwssd_epi32(a0, xv0, _mm512_set1_epi32(w0[0 * ic2n + ic2]));
              a0 = _mm512_dpwssd_epi32(a0, xv1, _mm512_set1_epi32(w0[1 * ic2n + ic2]));
              a0 = _mm512_dpwssd_epi32(a0, xv2, _mm512_set1_epi32(w0[2 * ic2n + ic2]));
              a0 = _mm512_dpwssd_epi32(a0, xv3, _mm512_set1_epi32(w0[3 * ic2n + ic2]));
              if (two) {
                a1 = _mm512_dpwssd_epi32(a1, xv0, _mm512_set1_epi32(w1[0 * ic2n + ic2]));
                a1 = _mm512_dpwssd_epi32(a1, xv1, _mm512_set1_epi32(w1[1 * ic2n + ic2]));
                a1 = _mm512_dpwssd_epi32(a1, xv2, _mm512_set1_epi32(w1[2 * ic2n + ic2]));
                a1 = _mm512_dpwssd_epi32(a1, xv3, _mm512_set1_epi32(w1[3 * ic2n + ic2]));
              }
              pe += std::size_t(pstride) * 2;
              po += std::size_t(pstride) * 2;
            }
          }
          requant_store(&out.at(in, oc, oh, j0), m, a0, shift);
          if (two) requant_store(&out.at(in, oc + 1, oh, j0), m, a1, shift);
        }
      }
    }
  }
  return out;
}

TensorI8 deconv2d_i8_vnni(const TensorI8& x, const TensorI8& w, const std::int32_t* wp,
                          int shift) {
  check_conv_args_i8(x, w, shift, false);
  const int oh_n = 2 * x.h, ow_n = 2 * x.w, co = w.n, ci = x.c;
  const int ic2n = (ci + 1) / 2;
  TensorI8 out(x.n, co, oh_n, ow_n, x.scale_exp + w.scale_exp + shift);

  auto wrow = [&](int oc, int kh) { return wp + (std::size_t(oc) * 4 + kh) * 4 * ic2n; };

  // layout: [ih][ic2][pair j], margins included
  const int pstride = x.w + 2;
  std::vector<std::int16_t> pk(std::size_t(x.h) * ic2n * pstride * 2, 0);
  auto packed_row = [&](int ih, int ic2) {
    return pk.data() + (std::size_t(ih) * ic2n + ic2) * pstride * 2;
  };


  for (int in = 0; in < x.n; ++in) {
    for (int ic2 = 0; ic2 < ic2n; ++ic2) {
      const int c0 = 2 * ic2, c1 = 2 * ic2 + 1;
      const bool has_c1 = c1 < ci;
      for (int ih = 0; ih < x.h; ++ih) {
        const std::int8_t* r0 = &x.at(in, c0, ih, 0);
        const std::int8_t* r1 = has_c1 ? &x.at(in, c1, ih, 0) : nullptr;
        std::int16_t* p = packed_row(ih, ic2);
        for (int j = 0; j < x.w; ++j) {
          p[2 * (j + 1)] = r0[j];
          p[2 * (j + 1) + 1] = r1 ? r1[j] : std::int16_t(0);
        }
      }
    }

    for (int oh = 0; oh < oh_n; ++oh) {
      for (int oc = 0; oc < co; oc += 2) {
        const bool two = oc + 1 < co;
        for (int j0 = 0; j0 < x.w; j0 += 16) {
          const int lanes = std::min(16, x.w - j0);
          const __mmask16 m = __mmask16((lanes == 16) ? 0xFFFF : ((1u << lanes) - 1));
          __m512i ae0 = _mm512_setzero_si512(); // even output columns, oc
          __m512i ao0 = _mm512_setzero_si512(); // odd output columns, oc
          __m512i ae1 = _mm512_setzero_si512();
          __m512i ao1 = _mm512_setzero_si512();
          // oh = 2*ih - 1 + kh fixes kh parity
          for (int kh = (oh + 1) & 1; kh < 4; kh += 2) {
            const int ih = (oh + 1 - kh) / 2;
            if (ih < 0 || ih >= x.h) continue;
            const std::int32_t* w0 = wrow(oc, kh);
            const std::int32_t* w1 = two ? wrow(oc + 1, kh) : w0;
            const std::int16_t* row = packed_row(ih, 0) + 2 * j0;
            for (int ic2 = 0; ic2 < ic2n; ++ic2) {
              // even cols: out[2j]   += w1*x[j]   + w3*x[j-1]
              // odd cols:  out[2j+1] += w0*x[j+1] + w2*x[j]
              const __m512i L0 = maskload_pairs(m, row);      // x[j-1]
              const __m512i L1 = maskload_pairs(m, row + 2);  // x[j]
              const __m512i L2 = maskload_pairs(m, row + 4);  // x[j+1]
              ae0 = _mm512_dpwssd_epi32(ae0, L1, _mm512_set1_epi32(w0[1 * ic2n + ic2]));
              ae0 = _mm512_dpwssd_epi32(ae0, L0, _mm512_set1_epi32(w0[3 * ic2n + ic2]));
              ao0 = _mm512_dpwssd_epi32(ao0, L2, _mm512_set1_epi32(w0[0 * ic2n + ic2]));
              ao0 = _mm512_dpwssd_epi32(ao0, L1, _mm512_set1_epi32(w0[2 * ic2n + ic2]));
              if (two) {
                ae1 = _mm512_dpwssd_epi32(ae1, L1, _mm512_set1_epi32(w1[1 * ic2n + ic2]));
                ae1 = _mm512_dpwssd_epi32(ae1, L0, _mm512_set1_epi32(w1[3 * ic2n + ic2]));
                ao1 = _mm512_dpwssd_epi32(ao1, L2, _mm512_set1_epi32(w1[0 * ic2n + ic2]));
                ao1 = _mm512_dpwssd_epi32(ao1, L1, _mm512_set1_epi32(w1[2 * ic2n + ic2]));
              }
              row += std::size_t(pstride) * 2;
            }
          }
          requant_store_interleaved(&out.at(in, oc, oh, 2 * j0), lanes, ae0, ao0, shift);
          if (two)
            requant_store_interleaved(&out.at(in, oc + 1, oh, 2 * j0), lanes, ae1, ao1, shift);
        }
      }
    }
  }
  return out;
}

} // namespace

#endif // RETIDE_VNNI

TensorI8 conv2d_i8(const TensorI8& x, const TensorI8& w, int shift) {
#if RETIDE_VNNI
  return conv2d_i8_vnni(x, w, pack_weight_pairs(w).data(), shift);
#else
  return detail::conv2d_i8_scalar(x, w, shift);
#endif
}

TensorI8 deconv2d_i8(const TensorI8& x, const TensorI8& w, int shift) {
#if RETIDE_VNNI
  return deconv2d_i8_vnni(x, w, pack_weight_pairs(w).data(), shift);
#else
  return detail::deconv2d_i8_scalar(x, w, shift);
#endif
}

void validate_accumulator_bounds(const ModelGraph& g) {
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    std::int64_t taps = 0;
    if (l.kind == LayerKind::Conv) {
      taps = std::int64_t(l.kernel) * l.kernel * l.in_ch;
    } else if (l.kind == LayerKind::Deconv) {
      taps = std::int64_t(l.kernel / l.stride) * (l.kernel / l.stride) * l.in_ch;
    } else {
      continue;
    }
    const std::int64_t worst = 128 * 128 * taps;
    if (worst > std::numeric_limits<std::int32_t>::max())
      throw std::invalid_argument("layer " + std::to_string(i) +
                                  ": worst-case accumulator exceeds int32");
  }
}

TensorF32 forward_i8(const QuantizedModel& qm, const TensorF32& x) {
  const ModelGraph& g = qm.graph;
  if (x.c != g.cin) throw std::invalid_argument("forward_i8: channel mismatch");
  if (x.h % 64 || x.w % 64)
    throw std::invalid_argument("forward_i8: dims must be multiples of 64 (tile first)");
  if (qm.act_exps.size() != g.layers.size() + 1)
    throw std::invalid_argument("forward_i8: model has no activation scale table");
  validate_accumulator_bounds(g);

  TensorI8 cur = quantize_tensor(x, qm.act_exps[0]);
  std::vector<TensorI8> stage_out;
  TensorF32 result;

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    const int p_out = qm.act_exps[i + 1];
    switch (l.kind) {
      case LayerKind::Conv:
        cur = conv2d_i8(cur, qm.weights.at(int(i)), qm.shifts.at(int(i)));
        break;
      case LayerKind::Deconv:
        cur = deconv2d_i8(cur, qm.weights.at(int(i)), qm.shifts.at(int(i)));
        break;
      case LayerKind::LeakyReLU:
        cur = leaky_relu_i8(cur);
        stage_out.push_back(cur);
        break;
      case LayerKind::ReLU:
        cur = relu_i8(cur);
        break;
      case LayerKind::ConcatSkip: {
        TensorI8 a = rescale_to(cur, p_out);
        TensorI8 b = rescale_to(stage_out.at(std::size_t(l.skip_source) - 1), p_out);
        cur = concat_channels(a, b);
        break;
      }
      case LayerKind::ClampOutput: {
        result = dequantize(cur);
        for (auto& v : result.data) v = std::clamp(v, 0.0f, 1.0f);
        break;
      }
    }
  }
  return result;
}

} // namespace retide
