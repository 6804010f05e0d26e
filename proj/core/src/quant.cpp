#include "retide/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "retide/rounding.hpp"
#include "retide/weights_io.hpp"

namespace retide {

int pick_scale(double maxabs) {
  if (maxabs < 0.0 || !std::isfinite(maxabs))
    throw std::invalid_argument("pick_scale: maxabs must be non-negative and finite");
  if (maxabs == 0.0) return -7;
  // maxabs = m * 2^e with m in [0.5, 1). 127*2^(e-7) = (127/128)*2^e, so the
  // smallest p with 127*2^p >= maxabs is e-7 when m <= 127/128, else e-6.
  int e = 0;
  const double m = std::frexp(maxabs, &e);
  return (m <= 127.0 / 128.0) ? e - 7 : e - 6;
}

namespace {

// tensors carry exponents inside the sanity range; calibration clamps here
inline int pick_scale_clamped(double maxabs) {
  return std::clamp(pick_scale(maxabs), kScaleExpMin, kScaleExpMax);
}

} // namespace

namespace {

inline std::int8_t quantize_one(double x, int scale_exp) {
  const double scaled = std::ldexp(x, -scale_exp);
  return clamp_i8(std::int64_t(round_half_even(scaled)));
}

} // namespace

TensorI8 quantize_tensor(const TensorF32& t, int scale_exp) {
  TensorI8 out(t.n, t.c, t.h, t.w, scale_exp);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = quantize_one(double(t.data[i]), scale_exp);
  return out;
}

TensorF32 dequantize(const TensorI8& t) {
  TensorF32 out(t.n, t.c, t.h, t.w);
  const float s = float(std::ldexp(1.0, t.scale_exp));
  for (std::size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = float(t.data[i]) * s;
  return out;
}

TensorF32 fake_quantize(const TensorF32& t, int scale_exp) {
  return dequantize(quantize_tensor(t, scale_exp));
}

void CalibStats::observe(const TensorF32& t) {
  ++count;
  for (float v : t.data) {
    const double a = std::fabs(double(v));
    if (a > maxabs) maxabs = a;
    if (a == 0.0) {
      ++zeros_;
    } else {
      ++hist_[std::size_t(pick_scale_clamped(a) - kScaleExpMin)];
    }
  }
}

int CalibStats::scale_for_percentile(double pct) const {
  if (pct >= 100.0 || count == 0) return pick_scale_clamped(maxabs);
  std::uint64_t total = zeros_;
  for (auto c : hist_) total += c;
  if (total == 0) return pick_scale(0.0);
  // nearest-rank: the ceil(pct/100 * N)-th smallest |v|
  std::uint64_t rank = std::uint64_t(std::ceil(pct / 100.0 * double(total)));
  rank = std::max<std::uint64_t>(rank, 1);
  if (rank <= zeros_) return pick_scale(0.0);
  std::uint64_t seen = zeros_;
  for (std::size_t b = 0; b < hist_.size(); ++b) {
    seen += hist_[b];
    if (seen >= rank) return int(b) + kScaleExpMin;
  }
  return pick_scale_clamped(maxabs);
}

namespace {

// Map layer index -> tensor index of the encoder stage outputs (post
// LeakyReLU), mirroring the forward pass structure.
std::vector<int> stage_tensor_indices(const ModelGraph& g) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    if (g.layers[i].kind == LayerKind::LeakyReLU) idx.push_back(int(i) + 1);
  return idx;
}

} // namespace

QuantizedModel calibrate(const ModelGraph& g, const WeightStore& w,
                         const std::vector<TensorF32>& calib_images, double percentile) {
  if (calib_images.empty())
    throw std::invalid_argument("calibrate: need at least one calibration image");
  if (percentile <= 0.0 || percentile > 100.0)
    throw std::invalid_argument("calibrate: percentile must be in (0, 100]");
  w.validate(g);

  const std::size_t n_layers = g.layers.size();
  std::vector<CalibStats> stats(n_layers + 1);

  for (const auto& img : calib_images) {
    if (img.c != g.cin) throw std::invalid_argument("calibrate: image channel mismatch");
    if (img.h % 64 || img.w % 64)
      throw std::invalid_argument("calibrate: image dims must be multiples of 64");

    stats[0].observe(img);
    TensorF32 cur = img;
    std::vector<TensorF32> stage_out;
    for (std::size_t i = 0; i < n_layers; ++i) {
      const auto& l = g.layers[i];
      switch (l.kind) {
        case LayerKind::Conv: cur = conv2d_f32(cur, w.at(int(i))); break;
        case LayerKind::Deconv: cur = deconv2d_f32(cur, w.at(int(i))); break;
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
      stats[i + 1].observe(cur);
    }
  }

  QuantizedModel qm;
  qm.graph = g;
  qm.act_exps.assign(n_layers + 1, 0);
  qm.act_exps[0] = stats[0].scale_for_percentile(percentile);

  // weight scales are always plain maxabs
  std::map<int, int> weight_exps;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& l = g.layers[i];
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Deconv) continue;
    const TensorF32& k = w.at(int(i));
    double maxabs = 0.0;
    for (float v : k.data) maxabs = std::max(maxabs, std::fabs(double(v)));
    const int p_w = pick_scale_clamped(maxabs);
    weight_exps[int(i)] = p_w;
    qm.weights.emplace(int(i), quantize_tensor(k, p_w));
  }

  const auto stage_idx = stage_tensor_indices(g);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& l = g.layers[i];
    const int p_in = qm.act_exps[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Deconv: {
        const int p_w = weight_exps.at(int(i));
        if (p_in + p_w > kScaleExpMax)
          throw std::invalid_argument("calibrate: activation scales out of range");
        // clamp keeps the requant shift >= 0; lossless where it binds because
        // accumulator values already sit on the 2^(p_in+p_w) grid
        const int p_out = std::max(stats[i + 1].scale_for_percentile(percentile), p_in + p_w);
        qm.shifts[int(i)] = p_out - p_in - p_w;
        qm.act_exps[i + 1] = p_out;
        break;
      }
      case LayerKind::ConcatSkip: {
        const int skip_t = stage_idx.at(std::size_t(l.skip_source) - 1);
        qm.act_exps[i + 1] = std::max(p_in, qm.act_exps[std::size_t(skip_t)]);
        break;
      }
      case LayerKind::LeakyReLU:
      case LayerKind::ReLU:
      case LayerKind::ClampOutput:
        qm.act_exps[i + 1] = p_in;
        break;
    }
  }
  return qm;
}

namespace {

// fake_quantize applied to the exact double accumulator (never to a float
// intermediate, which could round differently for accumulators > 2^24).
TensorF32 fq_from_acc(const std::vector<double>& acc, int n, int c, int h, int w, int p) {
  TensorF32 out(n, c, h, w);
  const float s = float(std::ldexp(1.0, p));
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const std::int8_t q = clamp_i8(std::int64_t(round_half_even(std::ldexp(acc[i], -p))));
    out.data[i] = float(q) * s;
  }
  return out;
}

TensorF32 refq(const TensorF32& t, int from_exp, int to_exp) {
  if (to_exp == from_exp) return t;
  if (to_exp < from_exp)
    throw std::invalid_argument("refq: target exponent must be coarser");
  return fake_quantize(t, to_exp);
}

} // namespace

TensorF32 forward_fakequant(const QuantizedModel& qm, const TensorF32& x) {
  const ModelGraph& g = qm.graph;
  if (x.c != g.cin) throw std::invalid_argument("forward_fakequant: channel mismatch");
  if (x.h % 64 || x.w % 64)
    throw std::invalid_argument("forward_fakequant: dims must be multiples of 64 (tile first)");
  if (qm.act_exps.size() != g.layers.size() + 1)
    throw std::invalid_argument("forward_fakequant: model has no activation scale table");

  TensorF32 cur = fake_quantize(x, qm.act_exps[0]);
  std::vector<TensorF32> stage_out;
  std::vector<int> stage_exp;
  int cur_exp = qm.act_exps[0];

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    const int p_out = qm.act_exps[i + 1];
    switch (l.kind) {
      case LayerKind::Conv: {
        const TensorF32 wq = dequantize(qm.weights.at(int(i)));
        auto acc = detail::conv2d_acc(cur, wq);
        cur = fq_from_acc(acc, cur.n, wq.n, cur.h / 2, cur.w / 2, p_out);
        break;
      }
      case LayerKind::Deconv: {
        const TensorF32 wq = dequantize(qm.weights.at(int(i)));
        auto acc = detail::deconv2d_acc(cur, wq);
        cur = fq_from_acc(acc, cur.n, wq.n, cur.h * 2, cur.w * 2, p_out);
        break;
      }
      case LayerKind::LeakyReLU: {
        // negatives: fq((26/256) * x) at the shared exponent
        const double alpha = 26.0 / 256.0;
        const float s = float(std::ldexp(1.0, p_out));
        for (auto& v : cur.data) {
          if (v < 0.0f) {
            const double prod = alpha * double(v);
            const std::int8_t q =
                clamp_i8(std::int64_t(round_half_even(std::ldexp(prod, -p_out))));
            v = float(q) * s;
          }
        }
        stage_out.push_back(cur);
        stage_exp.push_back(p_out);
        break;
      }
      case LayerKind::ReLU:
        for (auto& v : cur.data) v = std::max(v, 0.0f);
        break;
      case LayerKind::ConcatSkip: {
        const std::size_t s_i = std::size_t(l.skip_source) - 1;
        TensorF32 a = refq(cur, cur_exp, p_out);
        TensorF32 b = refq(stage_out.at(s_i), stage_exp.at(s_i), p_out);
        cur = concat_channels(a, b);
        break;
      }
      case LayerKind::ClampOutput:
        for (auto& v : cur.data) v = std::clamp(v, 0.0f, 1.0f);
        break;
    }
    cur_exp = p_out;
  }
  return cur;
}

// ---- RTDW serialization of quantized models ----

void save_quantized(const std::string& path, const QuantizedModel& qm) {
  WeightFile f;
  f.cin = std::uint8_t(qm.graph.cin);
  f.cout = std::uint8_t(qm.graph.cout);
  for (const auto& [id, kernel] : qm.weights)
    f.records.push_back(make_i8_record(std::uint16_t(id), kernel));
  WeightRecord table;
  table.layer_id = kScaleTableId;
  table.dtype = RecordType::ScaleTable;
  table.dims[0] = table.dims[1] = table.dims[2] = 1;
  table.dims[3] = std::uint32_t(qm.act_exps.size());
  table.payload.reserve(qm.act_exps.size());
  for (int e : qm.act_exps) table.payload.push_back(std::uint8_t(std::int8_t(e)));
  f.records.push_back(std::move(table));
  write_weight_file(path, f);
}

LoadedModel load_model(const std::string& path) {
  const WeightFile f = read_weight_file(path);
  LoadedModel m;
  m.graph = build_retide_graph(f.cin, f.cout);

  WeightStore fp32;
  QuantizedModel qm;
  qm.graph = m.graph;
  bool any_f32 = false, any_i8 = false, have_table = false;

  for (const auto& r : f.records) {
    switch (r.dtype) {
      case RecordType::F32:
        fp32.kernels.emplace(int(r.layer_id), record_to_f32(r));
        any_f32 = true;
        break;
      case RecordType::I8:
        qm.weights.emplace(int(r.layer_id), record_to_i8(r));
        any_i8 = true;
        break;
      case RecordType::ScaleTable:
        qm.act_exps.clear();
        qm.act_exps.reserve(r.payload.size());
        for (auto b : r.payload) qm.act_exps.push_back(int(std::int8_t(b)));
        have_table = true;
        break;
    }
  }

  if (any_f32) {
    fp32.validate(m.graph);
    m.fp32 = std::move(fp32);
  }
  if (any_i8) {
    if (!have_table)
      throw std::invalid_argument("RTDW: quantized records without a scale table: " + path);
    if (qm.act_exps.size() != m.graph.layers.size() + 1)
      throw std::invalid_argument("RTDW: scale table length does not match the graph");
    // recompute requant shifts from the stored exponents
    for (std::size_t i = 0; i < m.graph.layers.size(); ++i) {
      const auto& l = m.graph.layers[i];
      if (l.kind != LayerKind::Conv && l.kind != LayerKind::Deconv) continue;
      auto it = qm.weights.find(int(i));
      if (it == qm.weights.end())
        throw std::invalid_argument("RTDW: missing i8 kernel for layer " + std::to_string(i));
      const TensorI8& k = it->second;
      if (k.n != l.out_ch || k.c != l.in_ch || k.h != l.kernel || k.w != l.kernel)
        throw std::invalid_argument("RTDW: kernel shape mismatch at layer " + std::to_string(i));
      const int shift = qm.act_exps[i + 1] - qm.act_exps[i] - k.scale_exp;
      if (shift < 0)
        throw std::invalid_argument("RTDW: negative requant shift at layer " + std::to_string(i));
      qm.shifts[int(i)] = shift;
    }
    m.quantized = std::move(qm);
  }
  return m;
}

} // namespace retide
