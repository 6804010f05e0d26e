#include "retide/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace retide {

const TensorF32& WeightStore::at(int layer_id) const {
  auto it = kernels.find(layer_id);
  if (it == kernels.end())
    throw std::invalid_argument("WeightStore: no kernel for layer " + std::to_string(layer_id));
  return it->second;
}

void WeightStore::validate(const ModelGraph& g) const {
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Deconv) continue;
    const TensorF32& k = at(int(i));
    if (k.n != l.out_ch || k.c != l.in_ch || k.h != l.kernel || k.w != l.kernel)
      throw std::invalid_argument("WeightStore: kernel shape mismatch at layer " +
                                  std::to_string(i));
  }
}

ModelGraph build_retide_graph(int cin, int cout) {
  if ((cin != 1 && cin != 3) || (cout != 1 && cout != 3))
    throw std::invalid_argument("build_retide_graph: channel counts must be 1 or 3");

  ModelGraph g;
  g.cin = cin;
  g.cout = cout;
  g.depth = 6;

  auto conv = [&](int in, int out) {
    g.layers.push_back({LayerKind::Conv, in, out});
    g.layers.push_back({LayerKind::LeakyReLU, out, out});
  };
  auto deconv = [&](int in, int out, int skip_stage, int skip_ch) {
    g.layers.push_back({LayerKind::Deconv, in, out});
    if (skip_stage >= 0) {
      g.layers.push_back({LayerKind::ReLU, out, out});
      LayerSpec cat{LayerKind::ConcatSkip, out, out + skip_ch};
      cat.skip_source = skip_stage;
      g.layers.push_back(cat);
    }
  };

  // encoder: cin -> 64 -> 128 -> 256 -> 512 -> 512 -> 512 (bottleneck)
  conv(cin, 64);
  conv(64, 128);
  conv(128, 256);
  conv(256, 512);
  conv(512, 512);
  conv(512, 512);

  // decoder; concat widths 1024 -> 512, 1024 -> 256, 512 -> 128, 256 -> 64, 128 -> cout
  deconv(512, 512, 5, 512);
  deconv(1024, 512, 4, 512);
  deconv(1024, 256, 3, 256);
  deconv(512, 128, 2, 128);
  deconv(256, 64, 1, 64);
  deconv(128, cout, -1, 0); // linear head
  g.layers.push_back({LayerKind::ClampOutput, cout, cout});

  return g;
}

namespace {

void check_conv_args(const TensorF32& x, const TensorF32& w, bool strided_input) {
  if (w.h != 4 || w.w != 4) throw std::invalid_argument("kernel must be 4x4");
  if (x.c != w.c) throw std::invalid_argument("conv: channel mismatch");
  if (strided_input && (x.h < 2 || x.w < 2 || x.h % 2 || x.w % 2))
    throw std::invalid_argument("conv: input dims must be even and >= 2");
}

} // namespace

namespace detail {

// Column-parity split with one zero pair of margin at each end, so every
// kernel tap is a contiguous in-range read (margins realize the zero padding).
// even[j+1] = row[2j], odd[j+1] = row[2j+1].
static void split_row(const float* row, int w, float* even, float* odd) {
  const int half = w / 2;
  even[0] = odd[0] = 0.0f;
  even[half + 1] = odd[half + 1] = 0.0f;
  for (int j = 0; j < half; ++j) {
    even[j + 1] = row[2 * j];
    odd[j + 1] = row[2 * j + 1];
  }
}

std::vector<double> conv2d_acc(const TensorF32& x, const TensorF32& w) {
  check_conv_args(x, w, true);
  const int oh_n = x.h / 2, ow_n = x.w / 2, co = w.n, ci = x.c;
  std::vector<double> acc(std::size_t(x.n) * co * oh_n * ow_n, 0.0);

  const int stride_buf = ow_n + 2;
  std::vector<float> packed(std::size_t(ci) * x.h * 2 * stride_buf);
  auto even_row = [&](int ic, int ih) {
    return packed.data() + (std::size_t(ic) * x.h + ih) * 2 * stride_buf;
  };
  auto odd_row = [&](int ic, int ih) { return even_row(ic, ih) + stride_buf; };

  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < ci; ++ic)
      for (int ih = 0; ih < x.h; ++ih)
        split_row(&x.at(in, ic, ih, 0), x.w, even_row(ic, ih), odd_row(ic, ih));

    for (int oc = 0; oc < co; ++oc) {
      for (int oh = 0; oh < oh_n; ++oh) {
        double* arow = acc.data() + ((std::size_t(in) * co + oc) * oh_n + oh) * ow_n;
        for (int ic = 0; ic < ci; ++ic) {
          for (int kh = 0; kh < 4; ++kh) {
            const int ih = 2 * oh - 1 + kh;
            if (ih < 0 || ih >= x.h) continue;
            const float* ev = even_row(ic, ih);
            const float* od = odd_row(ic, ih);
            const float* wk = &w.at(oc, ic, kh, 0);
            const double w0 = wk[0], w1 = wk[1], w2 = wk[2], w3 = wk[3];
            // iw = 2*ow - 1 + kw; margins make all four taps in-range
            for (int ow = 0; ow < ow_n; ++ow) {
              arow[ow] += w0 * od[ow] + w1 * ev[ow + 1] + w2 * od[ow + 1] + w3 * ev[ow + 2];
            }
          }
        }
      }
    }
  }
  return acc;
}

std::vector<double> deconv2d_acc(const TensorF32& x, const TensorF32& w) {
  check_conv_args(x, w, false);
  const int oh_n = 2 * x.h, ow_n = 2 * x.w, co = w.n, ci = x.c;
  std::vector<double> acc(std::size_t(x.n) * co * oh_n * ow_n, 0.0);

  // input rows with one zero float of margin on each side
  const int stride_buf = x.w + 2;
  std::vector<float> padded(std::size_t(ci) * x.h * stride_buf);
  auto prow = [&](int ic, int ih) { return padded.data() + (std::size_t(ic) * x.h + ih) * stride_buf; };

  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < ci; ++ic)
      for (int ih = 0; ih < x.h; ++ih) {
        float* dst = prow(ic, ih);
        dst[0] = dst[x.w + 1] = 0.0f;
        std::copy_n(&x.at(in, ic, ih, 0), x.w, dst + 1);
      }

    for (int oc = 0; oc < co; ++oc) {
      for (int oh = 0; oh < oh_n; ++oh) {
        double* arow = acc.data() + ((std::size_t(in) * co + oc) * oh_n + oh) * ow_n;
        // oh = 2*ih - 1 + kh  =>  kh parity is fixed by oh
        for (int kh = (oh + 1) & 1; kh < 4; kh += 2) {
          const int ih = (oh + 1 - kh) / 2;
          if (ih < 0 || ih >= x.h) continue;
          for (int ic = 0; ic < ci; ++ic) {
            const float* row = prow(ic, ih);
            const float* wk = &w.at(oc, ic, kh, 0);
            // ow = 2*iw - 1 + kw; per output-column parity b the two live
            // taps are kw = b+1 ("iw = j") and kw = b+3 mod 4 shifted.
            //   b=0: kw=1 -> iw=j,   kw=3 -> iw=j-1
            //   b=1: kw=0 -> iw=j+1, kw=2 -> iw=j
            const double w0 = wk[0], w1 = wk[1], w2 = wk[2], w3 = wk[3];
            for (int j = 0; j < x.w; ++j) {
              arow[2 * j] += w1 * row[j + 1] + w3 * row[j];
              arow[2 * j + 1] += w0 * row[j + 2] + w2 * row[j + 1];
            }
          }
        }
      }
    }
  }
  return acc;
}

} // namespace detail

TensorF32 conv2d_f32(const TensorF32& x, const TensorF32& w) {
  auto acc = detail::conv2d_acc(x, w);
  TensorF32 out(x.n, w.n, x.h / 2, x.w / 2);
  std::transform(acc.begin(), acc.end(), out.data.begin(),
                 [](double v) { return float(v); });
  return out;
}

TensorF32 deconv2d_f32(const TensorF32& x, const TensorF32& w) {
  auto acc = detail::deconv2d_acc(x, w);
  TensorF32 out(x.n, w.n, 2 * x.h, 2 * x.w);
  std::transform(acc.begin(), acc.end(), out.data.begin(),
                 [](double v) { return float(v); });
  return out;
}

TensorF32 leaky_relu_f32(const TensorF32& x) {
  TensorF32 out = x;
  for (auto& v : out.data)
    if (v < 0.0f) v *= kLeakyAlpha;
  return out;
}

TensorF32 forward_f32(const ModelGraph& g, const WeightStore& w, const TensorF32& x) {
  if (x.c != g.cin) throw std::invalid_argument("forward_f32: channel mismatch");
  if (x.h % 64 || x.w % 64)
    throw std::invalid_argument("forward_f32: dims must be multiples of 64 (tile first)");

  TensorF32 cur = x;
  std::vector<TensorF32> stage_out; // encoder stage outputs, post-activation
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        cur = conv2d_f32(cur, w.at(int(i)));
        break;
      case LayerKind::Deconv:
        cur = deconv2d_f32(cur, w.at(int(i)));
        break;
      case LayerKind::LeakyReLU:
        cur = leaky_relu_f32(cur);
        stage_out.push_back(cur);
        break;
      case LayerKind::ReLU:
        for (auto& v : cur.data) v = std::max(v, 0.0f);
        break;
      case LayerKind::ConcatSkip:
        cur = concat_channels(cur, stage_out.at(std::size_t(l.skip_source) - 1));
        break;
      case LayerKind::ClampOutput:
        for (auto& v : cur.data) v = std::clamp(v, 0.0f, 1.0f);
        break;
    }
  }
  return cur;
}

std::uint64_t count_ops(const ModelGraph& g, int h, int w) {
  if (h % 64 || w % 64) throw std::invalid_argument("count_ops: dims must be multiples of 64");
  std::uint64_t total = 0;
  std::uint64_t ch = std::uint64_t(h), cw = std::uint64_t(w);
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::Conv) {
      ch /= 2;
      cw /= 2;
      total += 2ull * l.kernel * l.kernel * l.in_ch * l.out_ch * ch * cw;
    } else if (l.kind == LayerKind::Deconv) {
      ch *= 2;
      cw *= 2;
      total += 2ull * l.kernel * l.kernel * l.in_ch * l.out_ch * ch * cw;
    }
  }
  return total;
}

} // namespace retide
