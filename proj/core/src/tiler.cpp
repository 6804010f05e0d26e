#include "retide/tiler.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "retide/errors.hpp"
#include "retide/parallel.hpp"

namespace retide {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

namespace {

// 1D tile layout along one axis: starts, and partition boundaries placed
// V/2 into each overlap (interior tiles), pinned to the frame at the ends.
struct Axis {
  int count = 1;
  int padded = 0;
  std::vector<int> start; // tile origins in padded coords
  std::vector<int> lo, hi; // dest interval [lo, hi) per tile, in frame coords
};

Axis plan_axis(int extent, int tile, int stride, int overlap) {
  Axis ax;
  ax.padded = std::max(extent, tile);
  if (extent <= tile) {
    ax.count = 1;
  } else {
    ax.count = (extent - tile + stride - 1) / stride + 1;
  }
  ax.start.resize(ax.count);
  for (int i = 0; i < ax.count; ++i) ax.start[i] = i * stride;
  ax.start[ax.count - 1] = ax.padded - tile; // last tile end-aligned
  ax.lo.resize(ax.count);
  ax.hi.resize(ax.count);
  for (int i = 0; i < ax.count; ++i) {
    ax.lo[i] = (i == 0) ? 0 : ax.start[i] + overlap / 2;
    ax.hi[i] = (i + 1 == ax.count) ? extent : ax.start[i + 1] + overlap / 2;
  }
  return ax;
}

} // namespace

TilePlan plan_tiles(int w, int h, int tile, int overlap) {
  if (w < 1 || h < 1) throw std::invalid_argument("plan_tiles: frame dims must be >= 1");
  if (tile < 64 || tile % 64) throw std::invalid_argument("plan_tiles: tile must be a positive multiple of 64");
  if (overlap < 0 || overlap >= tile || overlap % 2)
    throw std::invalid_argument("plan_tiles: overlap must be even and in [0, tile)");

  TilePlan plan;
  plan.frame_w = w;
  plan.frame_h = h;
  plan.tile = tile;
  plan.overlap = overlap;

  const int stride = tile - overlap;
  const Axis axx = plan_axis(w, tile, stride, overlap);
  const Axis axy = plan_axis(h, tile, stride, overlap);
  plan.nx = axx.count;
  plan.ny = axy.count;
  plan.pad_right = axx.padded - w;
  plan.pad_bottom = axy.padded - h;

  plan.tiles.reserve(std::size_t(plan.nx) * plan.ny);
  for (int ty = 0; ty < plan.ny; ++ty)
    for (int tx = 0; tx < plan.nx; ++tx) {
      TileRecord r;
      r.index = std::size_t(ty) * plan.nx + tx;
      r.src = {axx.start[tx], axy.start[ty], tile, tile};
      const int x0 = axx.lo[tx], x1 = axx.hi[tx];
      const int y0 = axy.lo[ty], y1 = axy.hi[ty];
      r.dest = {x0, y0, x1 - x0, y1 - y0};
      r.keep = {x0 - axx.start[tx], y0 - axy.start[ty], x1 - x0, y1 - y0};
      plan.tiles.push_back(r);
    }
  return plan;
}

std::vector<TensorF32> extract(const TensorF32& frame, const TilePlan& plan) {
  if (frame.w != plan.frame_w || frame.h != plan.frame_h)
    throw std::invalid_argument("extract: frame dims do not match plan");

  std::vector<TensorF32> tiles;
  tiles.reserve(plan.tiles.size());
  for (const auto& rec : plan.tiles) {
    TensorF32 t(frame.n, frame.c, plan.tile, plan.tile);
    for (int in = 0; in < frame.n; ++in)
      for (int ic = 0; ic < frame.c; ++ic)
        for (int y = 0; y < plan.tile; ++y) {
          const int sy = reflect_index(rec.src.y + y, frame.h);
          const float* srow = &frame.at(in, ic, sy, 0);
          float* drow = &t.at(in, ic, y, 0);
          const int x0 = rec.src.x;
          if (x0 >= 0 && x0 + plan.tile <= frame.w) {
            std::copy_n(srow + x0, plan.tile, drow);
          } else {
            for (int x = 0; x < plan.tile; ++x)
              drow[x] = srow[reflect_index(x0 + x, frame.w)];
          }
        }
    tiles.push_back(std::move(t));
  }
  return tiles;
}

TensorF32 assemble(const std::vector<IndexedTile>& tiles, const TilePlan& plan) {
  const std::size_t expected = plan.tiles.size();
  if (tiles.size() != expected)
    throw ProtocolViolation("assemble: got " + std::to_string(tiles.size()) + " tiles, plan has " +
                            std::to_string(expected));

  std::vector<const TensorF32*> by_index(expected, nullptr);
  for (const auto& t : tiles) {
    if (t.index >= expected)
      throw ProtocolViolation("assemble: tile index " + std::to_string(t.index) + " out of range");
    if (by_index[t.index])
      throw ProtocolViolation("assemble: duplicate tile index " + std::to_string(t.index));
    by_index[t.index] = &t.data;
  }

  const TensorF32& first = *by_index[0];
  TensorF32 out(first.n, first.c, plan.frame_h, plan.frame_w);
  for (std::size_t i = 0; i < expected; ++i) {
    const TensorF32& t = *by_index[i];
    if (t.h != plan.tile || t.w != plan.tile || !t.same_shape(first))
      throw ProtocolViolation("assemble: tile " + std::to_string(i) + " has wrong dims");
    const auto& rec = plan.tiles[i];
    for (int in = 0; in < t.n; ++in)
      for (int ic = 0; ic < t.c; ++ic)
        for (int y = 0; y < rec.keep.h; ++y)
          std::copy_n(&t.at(in, ic, rec.keep.y + y, rec.keep.x), rec.keep.w,
                      &out.at(in, ic, rec.dest.y + y, rec.dest.x));
  }
  return out;
}

TensorF32 process_frame(const TensorF32& frame, int tile, int overlap, const TileFn& fn,
                        std::size_t threads) {
  const TilePlan plan = plan_tiles(frame.w, frame.h, tile, overlap);
  auto tiles = extract(frame, plan);
  std::vector<IndexedTile> done(tiles.size());
  parallel_for(tiles.size(), [&](std::size_t i) {
    done[i] = IndexedTile{i, fn(tiles[i])};
  }, threads);
  return assemble(done, plan);
}

} // namespace retide
