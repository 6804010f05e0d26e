#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "retide/quant.hpp"
#include "retide/rounding.hpp"
#include "retide/weights_io.hpp"
#include "support/test_util.hpp"

using namespace retide;

TEST_CASE("pick_scale worked boundaries") {
  CHECK(pick_scale(127.0) == 0);
  CHECK(pick_scale(1.0) == -6);
  CHECK(pick_scale(0.0) == -7);
  CHECK(pick_scale(0.992) == -7);   // 127*2^-7 = 0.9921875 >= 0.992
  CHECK(pick_scale(0.9922) == -6);  // just above
}

TEST_CASE("pick_scale minimality property") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> mag(-28.0, 28.0);
  std::uniform_real_distribution<double> frac(0.5, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double v = std::ldexp(frac(rng), int(mag(rng)));
    const int p = pick_scale(v);
    CHECK(std::ldexp(127.0, p) >= v);
    CHECK(std::ldexp(127.0, p - 1) < v);
  }
}

TEST_CASE("quantize_tensor worked examples") {
  TensorF32 t(1, 1, 1, 3);
  t.data = {0.5f, 10.0f, float(2.5 * std::ldexp(1.0, -6))};
  const TensorI8 q = quantize_tensor(t, -6);
  CHECK(q.data[0] == 32);   // exact multiple
  CHECK(q.data[1] == 127);  // 640 saturates
  CHECK(q.data[2] == 2);    // 2.5 ties to even
}

TEST_CASE("quantize is monotone non-decreasing") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<float> d(-3.0f, 3.0f);
  for (int i = 0; i < 2000; ++i) {
    float a = d(rng), b = d(rng);
    if (a > b) std::swap(a, b);
    TensorF32 t(1, 1, 1, 2);
    t.data = {a, b};
    const TensorI8 q = quantize_tensor(t, -5);
    CHECK(q.data[0] <= q.data[1]);
  }
}

TEST_CASE("dequantize worked examples and half-ulp roundtrip") {
  TensorI8 q(1, 1, 1, 2, -6);
  q.data = {32, -128};
  const TensorF32 x = dequantize(q);
  CHECK(x.data[0] == 0.5f);

  TensorI8 q2(1, 1, 1, 1, 0);
  q2.data = {-128};
  CHECK(dequantize(q2).data[0] == -128.0f);

  std::mt19937_64 rng(23);
  const int p = -6;
  const double half = std::ldexp(1.0, p - 1);
  const double range = 127.0 * std::ldexp(1.0, p);
  std::uniform_real_distribution<float> d(float(-range), float(range));
  for (int i = 0; i < 2000; ++i) {
    TensorF32 t(1, 1, 1, 1);
    t.data[0] = d(rng);
    const float back = dequantize(quantize_tensor(t, p)).data[0];
    CHECK(std::fabs(double(back) - double(t.data[0])) <= half);
  }
}

TEST_CASE("fake_quantize is idempotent and fixes grid points") {
  std::mt19937_64 rng(24);
  const TensorF32 t = testutil::random_tensor(rng, 1, 2, 4, 4, -1.5f, 1.5f);
  const TensorF32 once = fake_quantize(t, -5);
  const TensorF32 twice = fake_quantize(once, -5);
  CHECK(testutil::bits_equal(once, twice));

  TensorF32 grid(1, 1, 1, 1);
  grid.data[0] = float(17.0 * std::ldexp(1.0, -5));
  CHECK(fake_quantize(grid, -5).data[0] == grid.data[0]);
}

TEST_CASE("fake_quantize error is bounded by half an ulp in range") {
  std::mt19937_64 rng(25);
  const int p = -4;
  const double bound = 127.0 * std::ldexp(1.0, p);
  const TensorF32 t =
      testutil::random_tensor(rng, 1, 1, 8, 8, float(-bound), float(bound));
  const TensorF32 fq = fake_quantize(t, p);
  const double half = std::ldexp(1.0, p - 1);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    CHECK(std::fabs(double(fq.data[i]) - double(t.data[i])) <= half);
}

TEST_CASE("calibrate assigns the input scale from [0,1] images") {
  const ModelGraph g = build_retide_graph(3, 3);
  std::mt19937_64 rng(26);
  const WeightStore w = testutil::random_weights(g, rng);
  TensorF32 img = testutil::random_image(rng, 3, 64, 64);
  for (auto& v : img.data) v = std::min(v, 0.99f); // maxabs <= 127*2^-7
  const QuantizedModel qm = calibrate(g, w, {img});
  CHECK(qm.input_exp() == -7);

  img.data[0] = 1.0f; // above 0.9921875
  const QuantizedModel qm2 = calibrate(g, w, {img});
  CHECK(qm2.input_exp() == -6);
}

TEST_CASE("calibrate with all-zero weights defaults every weight scale to -7") {
  const ModelGraph g = build_retide_graph(1, 1);
  const WeightStore w = testutil::zero_weights(g);
  std::mt19937_64 rng(27);
  const QuantizedModel qm = calibrate(g, w, {testutil::random_image(rng, 1, 64, 64)});
  for (const auto& [id, k] : qm.weights) CHECK(k.scale_exp == -7);
  for (const auto& [id, s] : qm.shifts) CHECK(s >= 0);
}

TEST_CASE("calibrate is deterministic and order-independent") {
  const ModelGraph g = build_retide_graph(3, 3);
  std::mt19937_64 rng(28);
  const WeightStore w = testutil::random_weights(g, rng);
  std::vector<TensorF32> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(testutil::random_image(rng, 3, 64, 64));

  const QuantizedModel a = calibrate(g, w, imgs);
  const QuantizedModel b = calibrate(g, w, imgs);
  std::vector<TensorF32> shuffled = {imgs[2], imgs[0], imgs[1]};
  const QuantizedModel c = calibrate(g, w, shuffled);

  CHECK(a.act_exps == b.act_exps);
  CHECK(a.act_exps == c.act_exps);
  CHECK(a.shifts == b.shifts);
  CHECK(a.shifts == c.shifts);
  for (const auto& [id, k] : a.weights) {
    CHECK(testutil::bits_equal(k, b.weights.at(id)));
    CHECK(testutil::bits_equal(k, c.weights.at(id)));
  }
}

TEST_CASE("calibrate rejects an empty calibration set") {
  const ModelGraph g = build_retide_graph(3, 3);
  const WeightStore w = testutil::zero_weights(g);
  CHECK_THROWS_AS(calibrate(g, w, {}), std::invalid_argument);
}

TEST_CASE("concat operands share the concat output exponent") {
  std::mt19937_64 rng(29);
  const QuantizedModel qm = testutil::random_quantized_model(rng);
  // every requant shift non-negative, every exponent in the sanity range
  for (const auto& [id, s] : qm.shifts) CHECK(s >= 0);
  for (int e : qm.act_exps) {
    CHECK(e >= kScaleExpMin);
    CHECK(e <= kScaleExpMax);
  }
  for (std::size_t i = 0; i < qm.graph.layers.size(); ++i) {
    if (qm.graph.layers[i].kind != LayerKind::ConcatSkip) continue;
    CHECK(qm.act_exps[i + 1] >= qm.act_exps[i]);
  }
}

TEST_CASE("forward_fakequant maps zero input to zero output") {
  std::mt19937_64 rng(30);
  const QuantizedModel qm = testutil::random_quantized_model(rng);
  const TensorF32 x(1, 3, 64, 64);
  const TensorF32 y = forward_fakequant(qm, x);
  // zero input quantizes to zero codes; convs of zeros stay zero; the linear
  // head then clamps to zero
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("forward_fakequant approaches forward_f32 when scales are fine") {
  const ModelGraph g = build_retide_graph(1, 1);
  std::mt19937_64 rng(31);
  // tiny weights and inputs make every calibrated scale very fine
  WeightStore w = testutil::random_weights(g, rng, 1e-3f);
  TensorF32 x = testutil::random_image(rng, 1, 64, 64);
  for (auto& v : x.data) v *= 1e-4f;
  const QuantizedModel qm = calibrate(g, w, {x});
  const TensorF32 a = forward_fakequant(qm, x);
  const TensorF32 b = forward_f32(g, w, x);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(std::fabs(double(a.data[i]) - double(b.data[i])) < 1e-4);
}

TEST_CASE("quantized model roundtrips through the RTDW container") {
  std::mt19937_64 rng(32);
  const QuantizedModel qm = testutil::random_quantized_model(rng);
  const auto path = std::filesystem::temp_directory_path() / "retide_q_test.rtdw";
  save_quantized(path.string(), qm);
  const LoadedModel m = load_model(path.string());
  REQUIRE(m.has_quantized());
  CHECK(!m.fp32.has_value());
  CHECK(m.quantized->act_exps == qm.act_exps);
  CHECK(m.quantized->shifts == qm.shifts);
  for (const auto& [id, k] : qm.weights)
    CHECK(testutil::bits_equal(k, m.quantized->weights.at(id)));
  std::filesystem::remove(path);
}

TEST_CASE("fp32 weights roundtrip through the RTDW container") {
  const ModelGraph g = build_retide_graph(3, 1);
  std::mt19937_64 rng(33);
  const WeightStore w = testutil::random_weights(g, rng);
  const auto path = std::filesystem::temp_directory_path() / "retide_f_test.rtdw";
  save_weights(path.string(), g, w);
  const LoadedModel m = load_model(path.string());
  REQUIRE(m.fp32.has_value());
  CHECK(!m.has_quantized());
  CHECK(m.graph.cin == 3);
  CHECK(m.graph.cout == 1);
  for (const auto& [id, k] : w.kernels) CHECK(testutil::bits_equal(k, m.fp32->kernels.at(id)));
  std::filesystem::remove(path);
}

TEST_CASE("rounding helpers agree on ties") {
  CHECK(round_half_even(2.5) == 2.0);
  CHECK(round_half_even(3.5) == 4.0);
  CHECK(round_half_even(-2.5) == -2.0);
  CHECK(shift_round_half_even(5, 1) == 2);   // 2.5 -> 2
  CHECK(shift_round_half_even(7, 1) == 4);   // 3.5 -> 4
  CHECK(shift_round_half_even(-5, 1) == -2); // -2.5 -> -2
  std::mt19937_64 rng(34);
  for (int i = 0; i < 20000; ++i) {
    const std::int64_t a = std::int64_t(rng() % (1u << 24)) - (1 << 23);
    const int s = int(rng() % 12);
    CHECK(shift_round_half_even(a, s) ==
          std::int64_t(round_half_even(std::ldexp(double(a), -s))));
  }
}
