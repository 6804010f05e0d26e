#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "retide/model.hpp"
#include "support/reference_impl.hpp"
#include "support/test_util.hpp"

using namespace retide;

namespace {

int count_kind(const ModelGraph& g, LayerKind k) {
  int n = 0;
  for (const auto& l : g.layers) n += (l.kind == k);
  return n;
}

} // namespace

TEST_CASE("graph has 6 convs, 6 deconvs and 5 skips") {
  const ModelGraph g = build_retide_graph(3, 3);
  CHECK(count_kind(g, LayerKind::Conv) == 6);
  CHECK(count_kind(g, LayerKind::Deconv) == 6);
  CHECK(count_kind(g, LayerKind::ConcatSkip) == 5);
  CHECK(count_kind(g, LayerKind::LeakyReLU) == 6);
  CHECK(count_kind(g, LayerKind::ReLU) == 5);
  CHECK(count_kind(g, LayerKind::ClampOutput) == 1);
}

TEST_CASE("graph channel widths match the reference structure") {
  const ModelGraph g = build_retide_graph(3, 3);
  std::vector<std::pair<int, int>> conv_w, deconv_w;
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::Conv) conv_w.emplace_back(l.in_ch, l.out_ch);
    if (l.kind == LayerKind::Deconv) deconv_w.emplace_back(l.in_ch, l.out_ch);
  }
  const std::vector<std::pair<int, int>> enc = {{3, 64},   {64, 128},  {128, 256},
                                                {256, 512}, {512, 512}, {512, 512}};
  const std::vector<std::pair<int, int>> dec = {{512, 512}, {1024, 512}, {1024, 256},
                                                {512, 128}, {256, 64},   {128, 3}};
  CHECK(conv_w == enc);
  CHECK(deconv_w == dec);
}

TEST_CASE("grayscale graph starts from one channel") {
  const ModelGraph g = build_retide_graph(1, 1);
  for (const auto& l : g.layers)
    if (l.kind == LayerKind::Conv) {
      CHECK(l.in_ch == 1);
      CHECK(l.out_ch == 64);
      break;
    }
}

TEST_CASE("unsupported channel counts are rejected") {
  CHECK_THROWS_AS(build_retide_graph(2, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_retide_graph(3, 4), std::invalid_argument);
}

TEST_CASE("bottleneck spatial size follows repeated halving") {
  // 256 -> 128, 64, 32, 16, 8, 4
  int s = 256;
  for (int i = 0; i < 6; ++i) s /= 2;
  CHECK(s == 4);
}

TEST_CASE("conv2d on all-ones 4x4 with an all-ones kernel") {
  TensorF32 x(1, 1, 4, 4);
  TensorF32 w(1, 1, 4, 4);
  for (auto& v : x.data) v = 1.0f;
  for (auto& v : w.data) v = 1.0f;
  // frozen from the naive oracle: every stride-2 window under zero padding
  // covers a 3x3 block of ones
  std::uint64_t mults = 0;
  const TensorF32 expect = ref::conv2d(x, w, &mults);
  CHECK(expect.data == std::vector<float>{9, 9, 9, 9});
  CHECK(mults == 64); // 4 outputs x 16 taps

  const TensorF32 got = conv2d_f32(x, w);
  CHECK(testutil::bits_equal(got, expect));
}

TEST_CASE("conv2d zero input gives zero output and stride-2 dims") {
  TensorF32 x(1, 3, 256, 256);
  TensorF32 w(8, 3, 4, 4);
  std::mt19937_64 rng(3);
  for (auto& v : w.data) v = float(rng() % 100) / 50.0f - 1.0f;
  const TensorF32 y = conv2d_f32(x, w);
  CHECK(y.c == 8);
  CHECK(y.h == 128);
  CHECK(y.w == 128);
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("conv2d rejects shape mismatches") {
  CHECK_THROWS_AS(conv2d_f32(TensorF32(1, 2, 4, 4), TensorF32(1, 3, 4, 4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv2d_f32(TensorF32(1, 2, 5, 4), TensorF32(1, 2, 4, 4)),
                  std::invalid_argument);
}

TEST_CASE("conv2d matches the naive oracle on random instances") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 5; ++t) {
    const TensorF32 x = testutil::random_tensor(rng, 2, 3, 8, 12, -1.0f, 1.0f);
    const TensorF32 w = testutil::random_tensor(rng, 5, 3, 4, 4, -0.5f, 0.5f);
    CHECK(testutil::max_rel_err(conv2d_f32(x, w), ref::conv2d(x, w)) < 1e-6);
  }
}

TEST_CASE("deconv2d doubles dims and matches the naive oracle") {
  std::mt19937_64 rng(5);
  const TensorF32 x = testutil::random_tensor(rng, 1, 4, 4, 6, -1.0f, 1.0f);
  const TensorF32 w = testutil::random_tensor(rng, 3, 4, 4, 4, -0.5f, 0.5f);
  const TensorF32 y = deconv2d_f32(x, w);
  CHECK(y.h == 8);
  CHECK(y.w == 12);
  CHECK(testutil::max_rel_err(y, ref::deconv2d(x, w)) < 1e-6);

  const TensorF32 zero(1, 4, 4, 6);
  for (float v : deconv2d_f32(zero, w).data) CHECK(v == 0.0f);
}

TEST_CASE("conv/deconv adjoint identity with a shared single-channel kernel") {
  std::mt19937_64 rng(6);
  const TensorF32 x = testutil::random_tensor(rng, 1, 1, 4, 4, -1.0f, 1.0f);
  const TensorF32 y = testutil::random_tensor(rng, 1, 1, 2, 2, -1.0f, 1.0f);
  const TensorF32 w = testutil::random_tensor(rng, 1, 1, 4, 4, -1.0f, 1.0f);
  const TensorF32 cx = conv2d_f32(x, w);
  const TensorF32 dy = deconv2d_f32(y, w);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.data.size(); ++i) lhs += double(cx.data[i]) * y.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += double(x.data[i]) * dy.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
}

TEST_CASE("conv/deconv adjoint identity on multi-channel instances") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 5; ++t) {
    const TensorF32 x = testutil::random_tensor(rng, 1, 2, 8, 8, -1.0f, 1.0f);
    const TensorF32 y = testutil::random_tensor(rng, 1, 3, 4, 4, -1.0f, 1.0f);
    const TensorF32 w = testutil::random_tensor(rng, 3, 2, 4, 4, -1.0f, 1.0f);
    // deconv's kernel layout is (out,in); the adjoint of conv(.;w) uses the
    // channel-transposed kernel
    TensorF32 wt(2, 3, 4, 4);
    for (int o = 0; o < 3; ++o)
      for (int i = 0; i < 2; ++i)
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) wt.at(i, o, a, b) = w.at(o, i, a, b);
    const TensorF32 cx = conv2d_f32(x, w);
    const TensorF32 dy = deconv2d_f32(y, wt);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cx.data.size(); ++i) lhs += double(cx.data[i]) * y.data[i];
    for (std::size_t i = 0; i < x.data.size(); ++i) rhs += double(x.data[i]) * dy.data[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
  }
}

TEST_CASE("leaky relu uses alpha = 26/256 exactly") {
  CHECK(kLeakyAlpha == 0.1015625f);
  TensorF32 t(1, 1, 1, 3);
  t.data = {1.0f, -1.0f, -256.0f};
  const TensorF32 y = leaky_relu_f32(t);
  CHECK(y.data[0] == 1.0f);
  CHECK(y.data[1] == -0.1015625f);
  CHECK(y.data[2] == -26.0f);
}

TEST_CASE("leaky relu is monotone and dominates x") {
  float prev = -std::numeric_limits<float>::infinity();
  for (int i = -300; i <= 300; ++i) {
    TensorF32 t(1, 1, 1, 1);
    t.data[0] = float(i) * 0.25f;
    const float y = leaky_relu_f32(t).data[0];
    CHECK(y >= prev);
    // f(x) >= x, equal exactly when x >= 0
    CHECK(y >= t.data[0]);
    if (t.data[0] >= 0.0f)
      CHECK(y == t.data[0]);
    else
      CHECK(y > t.data[0]);
    prev = y;
  }
}

TEST_CASE("forward_f32 with zero weights is all zeros") {
  const ModelGraph g = build_retide_graph(3, 3);
  const WeightStore w = testutil::zero_weights(g);
  std::mt19937_64 rng(8);
  const TensorF32 x = testutil::random_image(rng, 3, 64, 64);
  const TensorF32 y = forward_f32(g, w, x);
  CHECK(y.same_shape(x));
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("forward_f32 preserves spatial shape on 64-multiples") {
  const ModelGraph g = build_retide_graph(1, 1);
  std::mt19937_64 rng(9);
  const WeightStore w = testutil::random_weights(g, rng);
  const TensorF32 x = testutil::random_image(rng, 1, 128, 64);
  const TensorF32 y = forward_f32(g, w, x);
  CHECK(y.n == 1);
  CHECK(y.c == 1);
  CHECK(y.h == 128);
  CHECK(y.w == 64);
  for (float v : y.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("forward_f32 rejects non-64-multiple dims") {
  const ModelGraph g = build_retide_graph(3, 3);
  const WeightStore w = testutil::zero_weights(g);
  CHECK_THROWS_AS(forward_f32(g, w, TensorF32(1, 3, 96, 64)), std::invalid_argument);
}

TEST_CASE("forward_f32 matches the naive oracle") {
  const ModelGraph g = build_retide_graph(3, 3);
  std::mt19937_64 rng(10);
  const WeightStore w = testutil::random_weights(g, rng);
  const TensorF32 x = testutil::random_image(rng, 3, 64, 64);
  const TensorF32 got = forward_f32(g, w, x);
  const TensorF32 want = ref::forward(g, w, x);
  CHECK(testutil::max_rel_err(got, want) < 1e-5);
}

TEST_CASE("count_ops single conv matches the analytic formula") {
  ModelGraph g;
  g.layers.push_back({LayerKind::Conv, 3, 64});
  CHECK(count_ops(g, 256, 256) == 100663296ull); // 2*16*3*64*128*128
}

TEST_CASE("count_ops of an empty graph is zero") {
  ModelGraph g;
  CHECK(count_ops(g, 256, 256) == 0);
}

TEST_CASE("count_ops equals the instrumented naive forward") {
  const ModelGraph g = build_retide_graph(3, 3);
  std::mt19937_64 rng(11);
  const WeightStore w = testutil::random_weights(g, rng);
  const TensorF32 x = testutil::random_image(rng, 3, 64, 64);
  std::uint64_t mults = 0;
  ref::forward(g, w, x, &mults);
  CHECK(count_ops(g, 64, 64) == 2 * mults);
}
