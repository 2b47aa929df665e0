#pragma once
// Procedural multi-object datasets with exact ground-truth masks and factor
// annotations, plus their binary serialization.
//
// Determinism contract: record i of a dataset with seed s depends only on
// (s, i) — per-record generators draw from Rng(s).child(i) — so generation
// is order-independent and parallelizable with identical output.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "slotvae/random.hpp"
#include "slotvae/tensor.hpp"

namespace slotvae {

enum class DatasetKind : std::uint8_t {
  kTetris = 0,
  kMultiDSprites = 1,
  kMultiDSpritesBin = 2,
  kShapes = 3,
};

const char* dataset_kind_name(DatasetKind kind);

struct DatasetHeader {
  DatasetKind kind = DatasetKind::kTetris;
  int h = 0, w = 0, c = 0;
  int max_objects = 0;
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
};

// Per-object annotation. Unused fields are zero. Positions are the top-left
// pixel of the object's bounding box for grid-aligned tetrominoes and the
// integer center pixel for sprites/shapes; scale is per-mille of the base
// size; angle is in centidegrees.
struct ObjectFactors {
  std::uint16_t shape_id = 0;
  std::uint16_t color_id = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint16_t scale_pm = 0;
  std::uint16_t angle_cd = 0;

  bool operator==(const ObjectFactors&) const = default;
};

struct SceneRecord {
  std::vector<std::uint8_t> image;       // h*w*c, interleaved rows
  std::uint8_t object_count = 0;
  std::vector<std::uint8_t> masks;       // max_objects*h*w, 0/255, visible pixels
  std::vector<std::uint8_t> background;  // h*w, 0/255
  std::vector<ObjectFactors> factors;    // length max_objects
};

struct Dataset {
  DatasetHeader header;
  std::vector<SceneRecord> records;
};

// ---------------------------------------------------------------- palettes

// saturated object colors: red, green, blue, cyan, magenta, yellow
inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kObjectColors = {{
    {{255, 0, 0}},
    {{0, 255, 0}},
    {{0, 0, 255}},
    {{0, 255, 255}},
    {{255, 0, 255}},
    {{255, 255, 0}},
}};

// ---------------------------------------------------------------- tetris

struct TetrisParams {
  int canvas = 35;  // pixels, must be a multiple of the 5px block size
  int pieces = 3;
};

// Distinct 4-block piece variants up to translation (rotations and
// reflections count as distinct), enumerated algorithmically. Each cell is
// (col, row) in block units, normalized to a zero minimum.
const std::vector<std::array<std::pair<int, int>, 4>>& tetromino_variants();
int tetromino_variant_count();

SceneRecord make_tetris_record(const TetrisParams& p, Rng rng);
Dataset generate_tetris(std::int64_t n, std::uint64_t seed, TetrisParams p = {});

// re-renders the image deterministically from factor annotations alone
std::vector<std::uint8_t> render_tetris_image(const TetrisParams& p,
                                              const std::vector<ObjectFactors>& f,
                                              int object_count);

// ------------------------------------------------------- multi-dsprites

// 64x64 scenes of 2..5 colored sprites (square/ellipse/heart) over a gray
// background; the binarized variant has 2..3 white sprites on black, one
// channel. Later-drawn sprites occlude earlier ones; stored masks hold the
// visible pixels only.
SceneRecord make_dsprites_record(bool binarized, Rng rng);
Dataset generate_multi_dsprites(std::int64_t n, std::uint64_t seed, bool binarized);
std::vector<std::uint8_t> render_dsprites_image(bool binarized, std::uint8_t bg_gray,
                                                const std::vector<ObjectFactors>& f,
                                                int object_count);

// ---------------------------------------------------------------- shapes

// 28x28 binary scenes with exactly three shapes (triangle up, triangle
// down, square); overlap is permitted and resolved by draw order.
SceneRecord make_shapes_record(Rng rng);
Dataset generate_shapes(std::int64_t n, std::uint64_t seed);
std::vector<std::uint8_t> render_shapes_image(const std::vector<ObjectFactors>& f,
                                              int object_count);

// ------------------------------------------------------------- kind switch

Dataset generate_dataset(DatasetKind kind, std::int64_t n, std::uint64_t seed,
                         TetrisParams tetris = {});

// ---------------------------------------------------------------- file IO
//
// Layout (little-endian): magic "MOBD" | u32 version=1 | u8 kind |
// u16 h,w,c | u8 max_objects | u64 record_count | u64 seed, then records
// back to back: image bytes | u8 object_count | mask bytes | background
// bytes | max_objects*6 u16 factors. Records have a fixed size, so the
// reader can seek.

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// random access over a dataset file without loading it whole
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);
  ~DatasetReader();
  DatasetReader(const DatasetReader&) = delete;
  DatasetReader& operator=(const DatasetReader&) = delete;

  const DatasetHeader& header() const { return header_; }
  SceneRecord read(std::int64_t index);

 private:
  std::string path_;
  DatasetHeader header_;
  std::int64_t record_bytes_ = 0;
  std::int64_t payload_offset_ = 0;
  void* file_ = nullptr;  // FILE*
};

// image bytes -> [C,H,W] reals in [0,1]
template <typename S>
Tensor<S> record_to_image(const DatasetHeader& h, const SceneRecord& r) {
  Tensor<S> out({h.c, h.h, h.w});
  const std::int64_t hw = static_cast<std::int64_t>(h.h) * h.w;
  for (std::int64_t p = 0; p < hw; ++p)
    for (int c = 0; c < h.c; ++c)
      out[c * hw + p] = static_cast<S>(r.image[p * h.c + c]) / S(255);
  return out;
}

}  // namespace slotvae
