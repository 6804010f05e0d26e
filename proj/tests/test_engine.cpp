#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "retide/int8_engine.hpp"
#include "retide/rounding.hpp"
#include "support/test_util.hpp"

using namespace retide;

namespace {

// the float route the engine must reproduce bit-for-bit
TensorF32 fakequant_conv(const TensorI8& x, const TensorI8& w, int shift, bool transposed) {
  const TensorF32 xf = dequantize(x);
  const TensorF32 wf = dequantize(w);
  const int p_out = x.scale_exp + w.scale_exp + shift;
  const auto acc = transposed ? detail::deconv2d_acc(xf, wf) : detail::conv2d_acc(xf, wf);
  TensorF32 out(x.n, w.n, transposed ? 2 * x.h : x.h / 2, transposed ? 2 * x.w : x.w / 2);
  const float s = float(std::ldexp(1.0, p_out));
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.data[i] = float(clamp_i8(std::int64_t(round_half_even(std::ldexp(acc[i], -p_out))))) * s;
  return out;
}

} // namespace

TEST_CASE("requantize worked examples") {
  CHECK(requantize(1000, 3) == 125);
  CHECK(requantize(1000, 4) == 62); // 62.5 ties to even
  CHECK(requantize(100000, 0) == 127);
  CHECK(requantize(-100000, 0) == -128);
  CHECK_THROWS_AS(requantize(1, -1), std::invalid_argument);
}

TEST_CASE("requantize with zero shift is a pure clamp") {
  for (int v = -300; v <= 300; v += 7)
    CHECK(requantize(v, 0) == clamp_i8(v));
}

TEST_CASE("leaky_relu_i8 worked examples") {
  CHECK(leaky_relu_i8(std::int8_t(50)) == 50);
  CHECK(leaky_relu_i8(std::int8_t(-100)) == -10); // -2600/256 = -10.15625
  CHECK(leaky_relu_i8(std::int8_t(-128)) == -13); // -3328/256 exact
}

TEST_CASE("leaky_relu_i8 equals the shift formula exhaustively and is monotone") {
  int prev = -128;
  for (int q = -128; q <= 127; ++q) {
    const int got = leaky_relu_i8(std::int8_t(q));
    const int want = q >= 0 ? q : int(clamp_i8(shift_round_half_even(q * 26, 8)));
    CHECK(got == want);
    CHECK(got >= prev);
    prev = got;
  }
}

TEST_CASE("relu_i8 clamps negatives to zero") {
  CHECK(relu_i8(std::int8_t(-5)) == 0);
  CHECK(relu_i8(std::int8_t(7)) == 7);
  std::mt19937_64 rng(41);
  const TensorI8 t = testutil::random_i8(rng, 1, 2, 4, 4, -6);
  const TensorI8 y = relu_i8(t);
  CHECK(y.scale_exp == t.scale_exp);
  for (auto q : y.data) CHECK(q >= 0);
}

TEST_CASE("rescale_to worked examples") {
  TensorI8 t(1, 1, 1, 2, -7);
  t.data = {100, 101};
  CHECK(testutil::bits_equal(rescale_to(t, -7), t)); // equal exponents: identity
  const TensorI8 r = rescale_to(t, -6);
  CHECK(r.scale_exp == -6);
  CHECK(r.data[0] == 50);
  CHECK(r.data[1] == 50); // 50.5 ties to even
  CHECK_THROWS_AS(rescale_to(t, -8), std::invalid_argument);
}

TEST_CASE("conv2d_i8 single-tap worked example") {
  TensorI8 x(1, 1, 2, 2, -7);
  x.data = {10, 0, 0, 0};
  TensorI8 w(1, 1, 4, 4, -7);
  w.at(0, 0, 1, 1) = 20; // the tap hitting x(0,0) for output (0,0)
  const TensorI8 y = conv2d_i8(x, w, 7);
  CHECK(y.scale_exp == -7);
  CHECK(y.data[0] == 2); // requantize(200, 7) = round(1.5625) = 2
}

TEST_CASE("conv2d_i8 zero operands give zero output") {
  std::mt19937_64 rng(42);
  const TensorI8 x = testutil::random_i8(rng, 1, 3, 8, 8, -7);
  const TensorI8 zw(4, 3, 4, 4, -7);
  for (auto q : conv2d_i8(x, zw, 2).data) CHECK(q == 0);
  const TensorI8 zx(1, 3, 8, 8, -7);
  const TensorI8 w = testutil::random_i8(rng, 4, 3, 4, 4, -7);
  for (auto q : conv2d_i8(zx, w, 2).data) CHECK(q == 0);
}

TEST_CASE("conv2d_i8 rejects shape mismatches") {
  CHECK_THROWS_AS(conv2d_i8(TensorI8(1, 2, 4, 4, 0), TensorI8(1, 3, 4, 4, 0), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv2d_i8(TensorI8(1, 2, 5, 4, 0), TensorI8(1, 2, 4, 4, 0), 0),
                  std::invalid_argument);
}

TEST_CASE("conv2d_i8 matches the fake-quant route bit-exactly") {
  std::mt19937_64 rng(43);
  for (int t = 0; t < 60; ++t) {
    const int ci = 1 + int(rng() % 5), co = 1 + int(rng() % 5);
    const int h = 2 * (1 + int(rng() % 5)), w = 2 * (1 + int(rng() % 5));
    const int px = -10 + int(rng() % 12), pw = -10 + int(rng() % 12);
    const int shift = int(rng() % 10);
    const TensorI8 x = testutil::random_i8(rng, 1, ci, h, w, px);
    const TensorI8 k = testutil::random_i8(rng, co, ci, 4, 4, pw);
    const TensorF32 want = fakequant_conv(x, k, shift, false);
    const TensorF32 got = dequantize(conv2d_i8(x, k, shift));
    CHECK(testutil::bits_equal(got, want));
  }
}

TEST_CASE("deconv2d_i8 matches the fake-quant route bit-exactly") {
  std::mt19937_64 rng(44);
  for (int t = 0; t < 60; ++t) {
    const int ci = 1 + int(rng() % 5), co = 1 + int(rng() % 5);
    const int h = 1 + int(rng() % 7), w = 1 + int(rng() % 7);
    const int px = -10 + int(rng() % 12), pw = -10 + int(rng() % 12);
    const int shift = int(rng() % 10);
    const TensorI8 x = testutil::random_i8(rng, 1, ci, h, w, px);
    const TensorI8 k = testutil::random_i8(rng, co, ci, 4, 4, pw);
    const TensorF32 want = fakequant_conv(x, k, shift, true);
    const TensorF32 got = dequantize(deconv2d_i8(x, k, shift));
    CHECK(testutil::bits_equal(got, want));
  }
}

TEST_CASE("SIMD and scalar kernels agree bit-for-bit") {
  if (!detail::simd_kernels_enabled()) return;
  std::mt19937_64 rng(45);
  for (int t = 0; t < 30; ++t) {
    const int ci = 1 + int(rng() % 7), co = 1 + int(rng() % 7);
    const int h = 2 * (1 + int(rng() % 8)), w = 2 * (1 + int(rng() % 8));
    const int shift = int(rng() % 8);
    const TensorI8 x = testutil::random_i8(rng, 1, ci, h, w, -7);
    const TensorI8 k = testutil::random_i8(rng, co, ci, 4, 4, -7);
    CHECK(testutil::bits_equal(conv2d_i8(x, k, shift),
                               detail::conv2d_i8_scalar(x, k, shift)));
    CHECK(testutil::bits_equal(deconv2d_i8(x, k, shift),
                               detail::deconv2d_i8_scalar(x, k, shift)));
  }
}

TEST_CASE("forward_i8 equals forward_fakequant after dequantization") {
  std::mt19937_64 rng(46);
  for (int t = 0; t < 3; ++t) {
    const QuantizedModel qm = testutil::random_quantized_model(rng, 3, 3);
    const TensorF32 x = testutil::random_image(rng, 3, 64, 64);
    const TensorF32 viaint = forward_i8(qm, x);
    const TensorF32 viafq = forward_fakequant(qm, x);
    CHECK(testutil::bits_equal(viaint, viafq));
  }
}

TEST_CASE("forward_i8 with zero weights yields a zero image") {
  const ModelGraph g = build_retide_graph(3, 3);
  const WeightStore w = testutil::zero_weights(g);
  std::mt19937_64 rng(47);
  const TensorF32 calib = testutil::random_image(rng, 3, 64, 64);
  const QuantizedModel qm = calibrate(g, w, {calib});
  const TensorF32 y = forward_i8(qm, testutil::random_image(rng, 3, 64, 64));
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("forward_i8 is deterministic across runs") {
  std::mt19937_64 rng(48);
  const QuantizedModel qm = testutil::random_quantized_model(rng, 3, 3);
  const TensorF32 x = testutil::random_image(rng, 3, 64, 64);
  CHECK(testutil::bits_equal(forward_i8(qm, x), forward_i8(qm, x)));
}

TEST_CASE("accumulator bounds hold for the built graph") {
  CHECK_NOTHROW(validate_accumulator_bounds(build_retide_graph(3, 3)));
  ModelGraph bad;
  bad.layers.push_back({LayerKind::Conv, 2000000, 8});
  CHECK_THROWS_AS(validate_accumulator_bounds(bad), std::invalid_argument);
}
