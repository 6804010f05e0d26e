#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "retide/quant.hpp"
#include "retide/tensor.hpp"

namespace retide {

// Evaluation harness: AWGN synthesis, PSNR/SSIM, throughput accounting.
// Noise levels are on the 8-bit scale and divided by 255 in the [0,1] domain.

// y = clamp(x + n, 0, 1), n ~ N(0, (sigma/255)^2) i.i.d. per element from a
// seeded deterministic stream (mt19937_64 + Box-Muller); channels independent.
TensorF32 add_awgn(const TensorF32& img, double sigma, std::uint64_t seed);

// 10*log10(1/MSE) over all channels and pixels; +inf when MSE == 0.
double psnr(const TensorF32& a, const TensorF32& b);

// Standard SSIM: 11x11 Gaussian window (stddev 1.5), C1=0.01^2, C2=0.03^2 on
// the [0,1] range, valid windows only, per channel then averaged.
// Requires min(h, w) >= 11.
double ssim(const TensorF32& a, const TensorF32& b);

// ITU-R BT.601 luma (0.299, 0.587, 0.114); identity on single-channel input.
TensorF32 to_luma(const TensorF32& img);

struct EvalRow {
  std::string image;
  double sigma = 0;
  double psnr_db = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<double, double> mean_psnr; // per sigma, arithmetic mean over images
  std::map<double, double> mean_ssim;
  int skipped = 0;

  // bench accounting: GOPS = counted_ops / elapsed / 1e9
  std::uint64_t frames = 0;
  double elapsed_s = 0.0;
  std::uint64_t counted_ops = 0;
  double gops = 0.0;
  std::optional<double> gops_per_watt;
};

using DenoiseFn = std::function<TensorF32(const TensorF32&)>;

// Denoiser wired through tiler + integer engine (f32 engine when the model
// carries no quantized weights).
DenoiseFn make_denoiser(const LoadedModel& model, int tile, int overlap);

struct EvalOptions {
  std::vector<double> sigmas{15, 25, 50};
  std::uint64_t seed = 1234;
  bool gray = false;
  std::size_t threads = 0;
};

// For each image x sigma: load, optional luma conversion, add_awgn, denoise,
// record PSNR/SSIM. Unreadable images are skipped with a warning and counted.
EvalReport run_eval(const DenoiseFn& denoise, const std::vector<std::string>& image_paths,
                    const EvalOptions& opt);

struct BenchOptions {
  int width = 1920;
  int height = 1088;
  int iters = 8;
  std::size_t workers = 0;
  double warmup_sec = 1.0; // the paper's procedure uses 60
  int tile = 0;            // 0 = whole frame (dims must be multiples of 64)
  int overlap = 32;
  std::optional<double> watts; // external measurement -> GOPS/W
  std::uint64_t seed = 99;
};

EvalReport run_bench(const LoadedModel& model, const BenchOptions& opt);

// image,sigma,psnr_db,ssim
void write_csv(std::ostream& os, const EvalReport& report);

} // namespace retide
