#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "retide/model.hpp"
#include "retide/tensor.hpp"

namespace retide {

// Post-training quantization with symmetric per-tensor power-of-two scales
// (zero point fixed at 0). Requantization between layers is then a pure
// rounded right shift, which is what makes the integer engine and the
// fake-quantized float simulator bit-exactly equivalent.

struct QuantParams {
  int scale_exp = -7; // scale s = 2^scale_exp
  int zero_point = 0; // symmetric scheme, always 0
};

// Running per-tensor statistics gathered during calibration. The histogram
// buckets |v| by its pick_scale exponent so that any percentile's scale can
// be recovered exactly without retaining samples.
struct CalibStats {
  double maxabs = 0.0;
  std::uint64_t count = 0; // tensors observed

  void observe(const TensorF32& t);
  // Nearest-rank percentile of |v| mapped through pick_scale.
  // pct == 100 uses maxabs directly.
  int scale_for_percentile(double pct) const;

private:
  std::uint64_t zeros_ = 0;
  std::array<std::uint64_t, std::size_t(kScaleExpMax - kScaleExpMin + 1)> hist_{};
};

struct QuantizedModel {
  ModelGraph graph;
  std::map<int, TensorI8> weights; // layer index -> int8 kernel, carries weight scale_exp
  // activation scale exponents by tensor index: 0 = network input,
  // i+1 = output of layer i. Concat inputs share the concat output's exponent
  // (the finer operand is re-shifted at runtime).
  std::vector<int> act_exps;
  std::map<int, int> shifts; // conv/deconv layer index -> requant right shift, >= 0

  int input_exp() const { return act_exps.at(0); }
};

// Smallest integer p with 127 * 2^p >= maxabs (clamped to the sanity range);
// maxabs == 0 picks the default -7.
int pick_scale(double maxabs);

// q = clamp(round_half_even(x / 2^p), -128, 127) elementwise.
TensorI8 quantize_tensor(const TensorF32& t, int scale_exp);

// x = q * 2^p exactly.
TensorF32 dequantize(const TensorI8& t);

// dequantize(quantize_tensor(t, p)); idempotent.
TensorF32 fake_quantize(const TensorF32& t, int scale_exp);

// Runs forward_f32 over each calibration image, observing the network input
// and every layer output; derives weight scales from each kernel's maxabs and
// activation scales via pick_scale (optionally a percentile of |v|). Output
// exponents of Conv/Deconv layers are clamped to >= p_in + p_w so every
// requant shift is a non-negative right shift (lossless where it binds).
QuantizedModel calibrate(const ModelGraph& g, const WeightStore& w,
                         const std::vector<TensorF32>& calib_images,
                         double percentile = 100.0);

// Forward pass where the input, every weight, and every layer output pass
// through fake_quantize at the model's exponents. Accumulation is in double
// precision and rounding happens on the exact accumulator, so the result
// equals dequantize(forward_i8(qm, x)) bit-for-bit.
TensorF32 forward_fakequant(const QuantizedModel& qm, const TensorF32& x);

// ---- RTDW-backed model loading (FP32 and/or quantized records) ----

struct LoadedModel {
  ModelGraph graph;
  std::optional<WeightStore> fp32;
  std::optional<QuantizedModel> quantized;

  bool has_quantized() const { return quantized.has_value(); }
};

void save_quantized(const std::string& path, const QuantizedModel& qm);
LoadedModel load_model(const std::string& path);

} // namespace retide
