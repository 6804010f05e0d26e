#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "retide/tensor.hpp"

namespace retide {

// Deterministic decomposition of a W x H frame into overlapping T x T tiles
// with center-crop stitching: each tile keeps its interior (trimming V/2 from
// edges shared with a neighbor), so the kept regions partition the frame
// exactly and reassembly is bit-exact regardless of completion order.

struct TileRecord {
  std::size_t index = 0; // row-major, contiguous from 0
  Rect src;              // T x T source in the (virtually padded) frame
  Rect keep;             // region within the tile that survives stitching
  Rect dest;             // where keep lands in the output frame
};

struct TilePlan {
  int frame_w = 0, frame_h = 0;
  int tile = 256;    // T, multiple of 64
  int overlap = 32;  // V, even, 0 <= V < T
  int nx = 1, ny = 1;
  int pad_right = 0, pad_bottom = 0; // virtual padding to reach coverage
  std::vector<TileRecord> tiles;

  int stride() const { return tile - overlap; }
};

TilePlan plan_tiles(int w, int h, int tile = 256, int overlap = 32);

// Cuts T x T tiles from the reflect-padded frame, in index order. Frames
// smaller than a dimension are padded by generalized (ping-pong) reflection;
// the padding is virtual, no padded copy of the frame is materialized.
std::vector<TensorF32> extract(const TensorF32& frame, const TilePlan& plan);

// A processed tile paired with its plan index; assemble accepts any order.
struct IndexedTile {
  std::size_t index = 0;
  TensorF32 data;
};

// Writes each tile's keep region to its dest region. Missing or duplicate
// indices are protocol violations, not silent gaps.
TensorF32 assemble(const std::vector<IndexedTile>& tiles, const TilePlan& plan);

// Convenience driver: extract, apply fn to every tile (optionally across
// threads), assemble. fn must be pure and preserve tile dimensions.
using TileFn = std::function<TensorF32(const TensorF32&)>;
TensorF32 process_frame(const TensorF32& frame, int tile, int overlap, const TileFn& fn,
                        std::size_t threads = 0);

// Generalized reflection index: triangular wave of period 2*(n-1) mapping any
// integer into [0, n). Degenerates to 0 for n == 1.
int reflect_index(int i, int n);

} // namespace retide
