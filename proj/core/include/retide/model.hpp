#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "retide/tensor.hpp"

namespace retide {

// Denoising U-Net: symmetric encoder-decoder, six strided 4x4 convolutions
// (no bias) with LeakyReLU, six transposed convolutions with ReLU (last one
// linear + clamp), skip concatenations at stages 1..5. Every Conv halves and
// every Deconv doubles the spatial dims exactly.

enum class LayerKind : std::uint8_t { Conv, Deconv, LeakyReLU, ReLU, ConcatSkip, ClampOutput };

struct LayerSpec {
  LayerKind kind;
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 4;
  int stride = 2;
  int pad = 1;
  int skip_source = -1; // encoder stage (1-based) feeding a ConcatSkip
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  int cin = 3;
  int cout = 3;
  int depth = 6; // downsampling stages
};

// Learned parameters: layer index -> kernel tensor of shape (out_ch, in_ch, 4, 4).
struct WeightStore {
  std::map<int, TensorF32> kernels;

  const TensorF32& at(int layer_id) const;
  // Every Conv/Deconv in g has exactly one entry with matching shape.
  void validate(const ModelGraph& g) const;
};

// 26/256 exactly; chosen for the fixed-point multiply-and-shift form.
constexpr float kLeakyAlpha = 26.0f / 256.0f;

ModelGraph build_retide_graph(int cin, int cout);

// Strided cross-correlation with zero padding, kernel (out_ch, in_ch, 4, 4).
// x.h and x.w must be even and >= 2. Output is (n, out_ch, h/2, w/2).
TensorF32 conv2d_f32(const TensorF32& x, const TensorF32& w);

// Transposed convolution, the adjoint of conv2d_f32 (kernel layout
// (out_ch, in_ch, 4, 4) with in_ch matching x). Output is (n, out_ch, 2h, 2w).
TensorF32 deconv2d_f32(const TensorF32& x, const TensorF32& w);

TensorF32 leaky_relu_f32(const TensorF32& x);

// x.c == g.cin, x.h and x.w multiples of 64, values in [0,1].
// Output has x's spatial shape, g.cout channels, clamped to [0,1].
TensorF32 forward_f32(const ModelGraph& g, const WeightStore& w, const TensorF32& x);

// Total arithmetic ops for one forward at h x w: sum over Conv/Deconv of
// 2 * k^2 * in_ch * out_ch * out_h * out_w (a MAC counts as two ops; the
// transposed convolution is accounted at output resolution, i.e. as the
// equivalent stride-1 convolution over the zero-stuffed upsampled input).
// Activations and concats are excluded.
std::uint64_t count_ops(const ModelGraph& g, int h, int w);

namespace detail {

// Double-precision accumulator planes backing both conv2d_f32 and the
// fake-quantized simulator (which must round from the exact accumulator,
// never from a float intermediate).
std::vector<double> conv2d_acc(const TensorF32& x, const TensorF32& w);
std::vector<double> deconv2d_acc(const TensorF32& x, const TensorF32& w);

} // namespace detail

} // namespace retide
