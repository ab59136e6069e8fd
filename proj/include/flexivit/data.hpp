#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace flexivit {

// Dense image, values in [0, 1], index (y, x, channel).
struct Image {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<double> v;

  double& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
};

// Labeled synthetic dataset: one shape per image, 8 classes
// (circle, square, triangle, cross) x (filled, outlined).
struct ShapeDataset {
  int side = 0;
  int channels = 1;
  std::vector<Image> images;
  std::vector<int> labels;

  static constexpr int kNumClasses = 8;
};

// Deterministic generator; image i depends only on (seed, i) so
// generation may be parallelized per image.
ShapeDataset gen_shapes(std::uint64_t seed, int n, int side, int channels = 1);

// Binary PGM (P5) / PPM (P6) reader, maxval 255 only. Values scaled to [0,1].
Image load_pnm(const std::string& path);

// ---------------------------------------------------------------------------
// FXT: a minimal binary tensor container used for checkpoints, datasets and
// exported matrices.
//
//   magic   : 4 bytes "FXT1"
//   count   : u32 LE
//   per tensor:
//     name_len : u32 LE, then name bytes (UTF-8)
//     dtype    : u8   (0 = f32, 1 = f64)
//     rank     : u8
//     dims     : rank x u32 LE
//     payload  : row-major, little-endian scalars
// ---------------------------------------------------------------------------

struct FxtTensor {
  std::vector<std::uint32_t> dims;
  bool is_f32 = false;          // storage dtype; values held as doubles
  std::vector<double> values;   // row-major

  std::size_t size() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

using FxtMap = std::map<std::string, FxtTensor>;

// `tensors` is written in the map's (name-sorted) order. Throws on
// duplicate or oversized dims and on IO failure.
void fxt_write(const std::string& path, const FxtMap& tensors);
FxtMap fxt_read(const std::string& path);

// Dataset convenience wrappers: tensors "images" (n, side, side, c)
// and "labels" (n).
void save_dataset_fxt(const std::string& path, const ShapeDataset& ds);
ShapeDataset load_dataset_fxt(const std::string& path);

}  // namespace flexivit
