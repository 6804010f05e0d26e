#include "retide/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

#include "retide/image_io.hpp"
#include "retide/int8_engine.hpp"
#include "retide/log.hpp"
#include "retide/parallel.hpp"
#include "retide/tiler.hpp"

namespace retide {

namespace {

// Box-Muller on explicit 53-bit uniforms; keeps the stream independent of
// library distribution internals.
class GaussianStream {
public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_) {
      have_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_ = true;
    return r * std::cos(a);
  }

private:
  double uniform() { return double(rng_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_ = false;
};

} // namespace

TensorF32 add_awgn(const TensorF32& img, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("add_awgn: sigma must be >= 0");
  if (sigma == 0.0) return img;
  TensorF32 out = img;
  GaussianStream gs(seed);
  const double s = sigma / 255.0;
  for (auto& v : out.data)
    v = std::clamp(float(double(v) + s * gs.next()), 0.0f, 1.0f);
  return out;
}

double psnr(const TensorF32& a, const TensorF32& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    se += d * d;
  }
  const double mse = se / double(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> gaussian_window(int radius, double stddev) {
  std::vector<double> k(std::size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[std::size_t(i + radius)] = std::exp(-double(i * i) / (2.0 * stddev * stddev));
    sum += k[std::size_t(i + radius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// separable valid-window filter: in (h x w) -> out ((h-2r) x (w-2r))
void filter_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& k,
                  std::vector<double>& tmp, std::vector<double>& out) {
  const int r = int(k.size() / 2);
  const int ow = w - 2 * r, oh = h - 2 * r;
  tmp.assign(std::size_t(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) s += k[i] * in[std::size_t(y) * w + x + i];
      tmp[std::size_t(y) * ow + x] = s;
    }
  out.assign(std::size_t(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) s += k[i] * tmp[(std::size_t(y) + i) * ow + x];
      out[std::size_t(y) * ow + x] = s;
    }
}

} // namespace

double ssim(const TensorF32& a, const TensorF32& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.h < 11 || a.w < 11) throw std::invalid_argument("ssim: min dimension is 11");

  constexpr double C1 = 0.01 * 0.01;
  constexpr double C2 = 0.03 * 0.03;
  const auto window = gaussian_window(5, 1.5);

  const std::size_t plane = a.plane();
  std::vector<double> xa(plane), xb(plane), xaa(plane), xbb(plane), xab(plane);
  std::vector<double> tmp, mu_a, mu_b, m_aa, m_bb, m_ab;

  double total = 0.0;
  for (int in = 0; in < a.n; ++in)
    for (int ic = 0; ic < a.c; ++ic) {
      const float* pa = &a.at(in, ic, 0, 0);
      const float* pb = &b.at(in, ic, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        xa[i] = double(pa[i]);
        xb[i] = double(pb[i]);
        xaa[i] = xa[i] * xa[i];
        xbb[i] = xb[i] * xb[i];
        xab[i] = xa[i] * xb[i];
      }
      filter_valid(xa, a.h, a.w, window, tmp, mu_a);
      filter_valid(xb, a.h, a.w, window, tmp, mu_b);
      filter_valid(xaa, a.h, a.w, window, tmp, m_aa);
      filter_valid(xbb, a.h, a.w, window, tmp, m_bb);
      filter_valid(xab, a.h, a.w, window, tmp, m_ab);

      double acc = 0.0;
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        const double num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
        const double den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        acc += num / den;
      }
      total += acc / double(mu_a.size());
    }
  return total / double(a.n * a.c);
}

TensorF32 to_luma(const TensorF32& img) {
  if (img.c == 1) return img;
  if (img.c != 3) throw std::invalid_argument("to_luma: need 1 or 3 channels");
  TensorF32 out(img.n, 1, img.h, img.w);
  for (int in = 0; in < img.n; ++in)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        out.at(in, 0, y, x) = 0.299f * img.at(in, 0, y, x) + 0.587f * img.at(in, 1, y, x) +
                              0.114f * img.at(in, 2, y, x);
  return out;
}

DenoiseFn make_denoiser(const LoadedModel& model, int tile, int overlap) {
  if (model.has_quantized()) {
    const QuantizedModel& qm = *model.quantized;
    return [&qm, tile, overlap](const TensorF32& img) {
      return process_frame(img, tile, overlap,
                           [&qm](const TensorF32& t) { return forward_i8(qm, t); }, 1);
    };
  }
  if (!model.fp32) throw std::invalid_argument("model has no weights");
  const ModelGraph& g = model.graph;
  const WeightStore& w = *model.fp32;
  return [&g, &w, tile, overlap](const TensorF32& img) {
    return process_frame(img, tile, overlap,
                         [&g, &w](const TensorF32& t) { return forward_f32(g, w, t); }, 1);
  };
}

EvalReport run_eval(const DenoiseFn& denoise, const std::vector<std::string>& image_paths,
                    const EvalOptions& opt) {
  if (image_paths.empty()) throw std::invalid_argument("run_eval: empty dataset");
  EvalReport report;

  struct Loaded {
    std::string name;
    TensorF32 img;
  };
  std::vector<Loaded> images;
  for (const auto& path : image_paths) {
    try {
      TensorF32 img = read_png(path);
      if (opt.gray) img = to_luma(img);
      images.push_back({path, std::move(img)});
    } catch (const std::exception& e) {
      RETIDE_LOG_WARN("skipping %s: %s", path.c_str(), e.what());
      ++report.skipped;
    }
  }
  if (images.empty()) throw std::invalid_argument("run_eval: no readable images");

  report.rows.resize(images.size() * opt.sigmas.size());
  parallel_for(report.rows.size(), [&](std::size_t idx) {
    const std::size_t ii = idx / opt.sigmas.size();
    const std::size_t si = idx % opt.sigmas.size();
    const double sigma = opt.sigmas[si];
    const TensorF32& clean = images[ii].img;
    const std::uint64_t stream =
        opt.seed ^ (std::uint64_t(ii) * 0x9E3779B97F4A7C15ull) ^ (std::uint64_t(si) << 32);
    const TensorF32 noisy = add_awgn(clean, sigma, stream);
    const TensorF32 restored = denoise(noisy);
    EvalRow row;
    row.image = images[ii].name;
    row.sigma = sigma;
    row.psnr_db = psnr(restored, clean);
    row.ssim = (clean.h >= 11 && clean.w >= 11) ? ssim(restored, clean) : 0.0;
    report.rows[idx] = std::move(row);
  }, opt.threads);

  for (double s : opt.sigmas) {
    double psum = 0.0, ssum = 0.0;
    int cnt = 0;
    for (const auto& r : report.rows)
      if (r.sigma == s) {
        psum += r.psnr_db;
        ssum += r.ssim;
        ++cnt;
      }
    if (cnt) {
      report.mean_psnr[s] = psum / cnt;
      report.mean_ssim[s] = ssum / cnt;
    }
  }
  report.frames = std::uint64_t(report.rows.size());
  return report;
}

EvalReport run_bench(const LoadedModel& model, const BenchOptions& opt) {
  using clock = std::chrono::steady_clock;
  const int tile = opt.tile > 0 ? opt.tile : 0;
  if (tile == 0 && (opt.width % 64 || opt.height % 64))
    throw std::invalid_argument("run_bench: dims must be multiples of 64 unless tiled");

  // synthetic frame; content does not affect the op count
  TensorF32 frame(1, model.graph.cin, opt.height, opt.width);
  {
    GaussianStream gs(opt.seed);
    for (auto& v : frame.data) v = std::clamp(float(0.5 + 0.2 * gs.next()), 0.0f, 1.0f);
  }

  std::uint64_t ops_per_frame = 0;
  DenoiseFn fn;
  if (tile > 0) {
    const TilePlan plan = plan_tiles(opt.width, opt.height, tile, opt.overlap);
    ops_per_frame = std::uint64_t(plan.tiles.size()) * count_ops(model.graph, tile, tile);
    fn = make_denoiser(model, tile, opt.overlap);
  } else {
    ops_per_frame = count_ops(model.graph, opt.height, opt.width);
    if (model.has_quantized()) {
      const QuantizedModel& qm = *model.quantized;
      fn = [&qm](const TensorF32& f) { return forward_i8(qm, f); };
    } else {
      const ModelGraph& g = model.graph;
      const WeightStore& w = *model.fp32;
      fn = [&g, &w](const TensorF32& f) { return forward_f32(g, w, f); };
    }
  }

  // warm-up
  const auto warm_end = clock::now() + std::chrono::duration_cast<clock::duration>(
                                           std::chrono::duration<double>(opt.warmup_sec));
  if (opt.warmup_sec > 0)
    do {
      volatile float sink = fn(frame).data[0];
      (void)sink;
    } while (clock::now() < warm_end);

  const auto t0 = clock::now();
  parallel_for(std::size_t(opt.iters), [&](std::size_t) {
    volatile float sink = fn(frame).data[0];
    (void)sink;
  }, opt.workers);
  const double elapsed = std::chrono::duration<double>(clock::now() - t0).count();

  EvalReport report;
  report.frames = std::uint64_t(opt.iters);
  report.elapsed_s = elapsed;
  report.counted_ops = ops_per_frame * std::uint64_t(opt.iters);
  report.gops = double(report.counted_ops) / elapsed / 1e9;
  if (opt.watts) report.gops_per_watt = report.gops / *opt.watts;
  return report;
}

void write_csv(std::ostream& os, const EvalReport& report) {
  os << "image,sigma,psnr_db,ssim\n";
  for (const auto& r : report.rows)
    os << r.image << ',' << r.sigma << ',' << r.psnr_db << ',' << r.ssim << '\n';
}

} // namespace retide
