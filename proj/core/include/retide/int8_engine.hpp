#pragma once

#include <cstdint>
#include <vector>

#include "retide/quant.hpp"
#include "retide/tensor.hpp"

namespace retide {

// Integer execution of the quantized network: int8 operands, int32
// accumulation, rounded right-shift requantization. Matches the fake-quant
// float simulator bit-for-bit on every op and end to end.

struct AccumulatorTile {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<std::int32_t> data;

  AccumulatorTile(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(std::size_t(n_) * c_ * h_ * w_, 0) {}
};

// round_half_even(acc / 2^shift) clamped to int8. shift must be >= 0;
// requantize(acc, 0) == clamp(acc).
std::int8_t requantize(std::int32_t acc, int shift);

// Same tap pattern as the f32 counterparts; int32 accumulation, then
// per-element requantize. Output scale_exp = x.scale_exp + w.scale_exp + shift.
TensorI8 conv2d_i8(const TensorI8& x, const TensorI8& w, int shift);
TensorI8 deconv2d_i8(const TensorI8& x, const TensorI8& w, int shift);

// q >= 0 -> q; q < 0 -> round_half_even(q * 26 / 256), i.e. multiply by 26
// and rounded arithmetic shift by 8. Input and output share scale_exp.
std::int8_t leaky_relu_i8(std::int8_t q);
TensorI8 leaky_relu_i8(const TensorI8& x);

std::int8_t relu_i8(std::int8_t q);
TensorI8 relu_i8(const TensorI8& x);

// Rounded right shift onto a coarser grid (target_exp >= x.scale_exp);
// aligns concat operands.
TensorI8 rescale_to(const TensorI8& x, int target_exp);

// Throws unless every layer's worst-case |accumulator| fits int32
// (128 * 128 * taps bound).
void validate_accumulator_bounds(const ModelGraph& g);

// Quantize the input at the model's input exponent, run every layer in
// integer arithmetic, dequantize and clamp the final output to [0,1].
// x values in [0,1], dims multiples of 64.
TensorF32 forward_i8(const QuantizedModel& qm, const TensorF32& x);

// Reusable execution context: packs weight tables for the SIMD kernels once,
// then serves any number of concurrent forward passes. The model must outlive
// the executor. forward_i8 is a one-shot wrapper around this.
class Int8Executor {
public:
  explicit Int8Executor(const QuantizedModel& qm);

  TensorF32 run(const TensorF32& x) const;
  const QuantizedModel& model() const { return *qm_; }

private:
  const QuantizedModel* qm_;
  std::vector<std::vector<std::int32_t>> packed_; // per layer, SIMD builds only
};

namespace detail {
// Portable reference kernels (always built); the public entry points dispatch
// to SIMD specializations when compiled in. Both produce identical bits.
TensorI8 conv2d_i8_scalar(const TensorI8& x, const TensorI8& w, int shift);
TensorI8 deconv2d_i8_scalar(const TensorI8& x, const TensorI8& w, int shift);
bool simd_kernels_enabled();
} // namespace detail

} // namespace retide
