#include "slotvae/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>

namespace slotvae {

static_assert(std::endian::native == std::endian::little,
              "dataset format assumes a little-endian host");

const char* dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kTetris: return "tetris";
    case DatasetKind::kMultiDSprites: return "multi-dsprites";
    case DatasetKind::kMultiDSpritesBin: return "multi-dsprites-bin";
    case DatasetKind::kShapes: return "shapes";
  }
  return "unknown";
}

namespace {

constexpr int kBlock = 5;  // tetromino block edge, pixels

// image + per-pixel owner (-1 background, else object index); the single
// rendering path shared by the generators and the factor re-renderers, so
// re-rendering from factors is bitwise faithful by construction
struct Raster {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> image;
  std::vector<int> owner;

  Raster(int hh, int ww, int cc, std::uint8_t bg)
      : h(hh), w(ww), c(cc), image(static_cast<size_t>(hh) * ww * cc, bg),
        owner(static_cast<size_t>(hh) * ww, -1) {}

  void paint(int x, int y, int obj, const std::uint8_t* color) {
    const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
    owner[p] = obj;
    for (int ch = 0; ch < c; ++ch) image[p * c + ch] = color[ch];
  }
};

SceneRecord finish_record(const Raster& r, int max_objects, int object_count,
                          std::vector<ObjectFactors> factors) {
  SceneRecord rec;
  rec.image = r.image;
  rec.object_count = static_cast<std::uint8_t>(object_count);
  const std::int64_t hw = static_cast<std::int64_t>(r.h) * r.w;
  rec.masks.assign(static_cast<size_t>(max_objects) * hw, 0);
  rec.background.assign(static_cast<size_t>(hw), 0);
  for (std::int64_t p = 0; p < hw; ++p) {
    if (r.owner[p] < 0)
      rec.background[p] = 255;
    else
      rec.masks[r.owner[p] * hw + p] = 255;
  }
  factors.resize(static_cast<size_t>(max_objects));
  rec.factors = std::move(factors);
  return rec;
}

}  // namespace

// ================================ tetris =================================

const std::vector<std::array<std::pair<int, int>, 4>>& tetromino_variants() {
  static const std::vector<std::array<std::pair<int, int>, 4>> variants = [] {
    using Cells = std::vector<std::pair<int, int>>;  // (col,row)
    auto normalize = [](Cells cells) {
      int mc = cells[0].first, mr = cells[0].second;
      for (auto& [c, r] : cells) {
        mc = std::min(mc, c);
        mr = std::min(mr, r);
      }
      for (auto& [c, r] : cells) {
        c -= mc;
        r -= mr;
      }
      std::sort(cells.begin(), cells.end());
      return cells;
    };
    // grow connected cell sets from a seed cell; dedupe up to translation
    std::set<Cells> seen;
    std::vector<Cells> frontier = {normalize({{0, 0}})};
    seen.insert(frontier[0]);
    for (int sz = 1; sz < 4; ++sz) {
      std::set<Cells> next;
      for (const Cells& base : frontier) {
        for (const auto& [c, r] : base) {
          const int dc[4] = {1, -1, 0, 0}, dr[4] = {0, 0, 1, -1};
          for (int d = 0; d < 4; ++d) {
            std::pair<int, int> cand{c + dc[d], r + dr[d]};
            if (std::find(base.begin(), base.end(), cand) != base.end()) continue;
            Cells grown = base;
            grown.push_back(cand);
            next.insert(normalize(std::move(grown)));
          }
        }
      }
      frontier.assign(next.begin(), next.end());
    }
    std::vector<std::array<std::pair<int, int>, 4>> out;
    for (const Cells& cs : frontier) {
      std::array<std::pair<int, int>, 4> a;
      std::copy(cs.begin(), cs.end(), a.begin());
      out.push_back(a);
    }
    // std::set iteration is already sorted; the order (and thus shape_id
    // assignment) is stable across runs and platforms
    if (out.size() != 19)
      fail("tetromino enumeration produced " + std::to_string(out.size()) +
           " variants, expected 19");
    return out;
  }();
  return variants;
}

int tetromino_variant_count() {
  return static_cast<int>(tetromino_variants().size());
}

namespace {

struct PiecePlacement {
  int variant = 0, color = 0, gx = 0, gy = 0;  // grid-block coordinates
};

void raster_tetris(Raster& r, const std::vector<PiecePlacement>& pieces) {
  for (size_t i = 0; i < pieces.size(); ++i) {
    const auto& cells = tetromino_variants()[pieces[i].variant];
    const auto& color = kObjectColors[pieces[i].color];
    for (const auto& [c, row] : cells)
      for (int dy = 0; dy < kBlock; ++dy)
        for (int dx = 0; dx < kBlock; ++dx)
          r.paint((pieces[i].gx + c) * kBlock + dx,
                  (pieces[i].gy + row) * kBlock + dy, static_cast<int>(i),
                  color.data());
  }
}

void check_tetris_params(const TetrisParams& p) {
  if (p.canvas <= 0 || p.canvas % kBlock != 0)
    fail("tetris: canvas must be a positive multiple of " +
         std::to_string(kBlock) + ", got " + std::to_string(p.canvas));
  if (p.pieces < 1) fail("tetris: need at least one piece");
  const int g = p.canvas / kBlock;
  if (g * g < p.pieces * 4)
    fail("tetris: canvas " + std::to_string(p.canvas) + " cannot hold " +
         std::to_string(p.pieces) + " pieces");
}

}  // namespace

SceneRecord make_tetris_record(const TetrisParams& p, Rng rng) {
  check_tetris_params(p);
  const int g = p.canvas / kBlock;
  const auto& variants = tetromino_variants();
  const int nv = static_cast<int>(variants.size());

  std::vector<PiecePlacement> placed;
  for (int scene_try = 0; scene_try < 100 && placed.empty(); ++scene_try) {
    std::vector<std::uint8_t> occ(static_cast<size_t>(g) * g, 0);
    std::vector<PiecePlacement> attempt;
    for (int piece = 0; piece < p.pieces; ++piece) {
      bool ok = false;
      for (int retry = 0; retry < 1000 && !ok; ++retry) {
        PiecePlacement pl;
        pl.variant = static_cast<int>(rng.below(static_cast<std::uint64_t>(nv)));
        pl.color = static_cast<int>(rng.below(6));
        int wc = 0, hc = 0;
        for (const auto& [c, row] : variants[pl.variant]) {
          wc = std::max(wc, c + 1);
          hc = std::max(hc, row + 1);
        }
        pl.gx = static_cast<int>(rng.below(static_cast<std::uint64_t>(g - wc + 1)));
        pl.gy = static_cast<int>(rng.below(static_cast<std::uint64_t>(g - hc + 1)));
        bool overlap = false;
        for (const auto& [c, row] : variants[pl.variant])
          overlap = overlap || occ[(pl.gy + row) * g + (pl.gx + c)];
        if (overlap) continue;
        for (const auto& [c, row] : variants[pl.variant])
          occ[(pl.gy + row) * g + (pl.gx + c)] = 1;
        attempt.push_back(pl);
        ok = true;
      }
      if (!ok) break;  // resample the whole scene
    }
    if (static_cast<int>(attempt.size()) == p.pieces) placed = std::move(attempt);
  }
  if (placed.empty())
    fail("tetris: could not place " + std::to_string(p.pieces) +
         " pieces on canvas " + std::to_string(p.canvas));

  Raster r(p.canvas, p.canvas, 3, 0);
  raster_tetris(r, placed);
  std::vector<ObjectFactors> factors(placed.size());
  for (size_t i = 0; i < placed.size(); ++i) {
    factors[i].shape_id = static_cast<std::uint16_t>(placed[i].variant);
    factors[i].color_id = static_cast<std::uint16_t>(placed[i].color);
    factors[i].x = static_cast<std::uint16_t>(placed[i].gx * kBlock);
    factors[i].y = static_cast<std::uint16_t>(placed[i].gy * kBlock);
    factors[i].scale_pm = 0;  // fixed-size pieces: scale/angle are unused
    factors[i].angle_cd = 0;
  }
  return finish_record(r, p.pieces, p.pieces, std::move(factors));
}

std::vector<std::uint8_t> render_tetris_image(const TetrisParams& p,
                                              const std::vector<ObjectFactors>& f,
                                              int object_count) {
  check_tetris_params(p);
  std::vector<PiecePlacement> pieces;
  for (int i = 0; i < object_count; ++i)
    pieces.push_back({static_cast<int>(f[i].shape_id),
                      static_cast<int>(f[i].color_id), f[i].x / kBlock,
                      f[i].y / kBlock});
  Raster r(p.canvas, p.canvas, 3, 0);
  raster_tetris(r, pieces);
  return r.image;
}

Dataset generate_tetris(std::int64_t n, std::uint64_t seed, TetrisParams p) {
  check_tetris_params(p);
  Dataset ds;
  ds.header = {DatasetKind::kTetris, p.canvas, p.canvas, 3, p.pieces,
               static_cast<std::uint64_t>(n), seed};
  Rng root(seed);
  ds.records.reserve(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    ds.records.push_back(
        make_tetris_record(p, root.child(static_cast<std::uint64_t>(i))));
  return ds;
}

// ============================ multi-dsprites =============================

namespace {

constexpr int kSpriteCanvas = 64;
constexpr double kSpriteBase = 22.0;  // full size in px at scale 1000

struct SpriteSpec {
  int shape = 0, color = 0, cx = 0, cy = 0;
  int scale_pm = 1000, angle_cd = 0;
};

bool sprite_contains(const SpriteSpec& s, int px, int py) {
  const double half = kSpriteBase * s.scale_pm / 1000.0 / 2.0;
  const double th = s.angle_cd * (M_PI / 18000.0);
  const double dx = px - s.cx, dy = py - s.cy;
  const double u = std::cos(th) * dx + std::sin(th) * dy;
  const double v = -std::sin(th) * dx + std::cos(th) * dy;
  switch (s.shape) {
    case 0:  // square
      return std::fabs(u) <= half && std::fabs(v) <= half;
    case 1: {  // 2:1 ellipse
      const double a = u / half, b = v / (half * 0.5);
      return a * a + b * b <= 1.0;
    }
    default: {  // heart, tip down
      const double X = u / (half * 1.2), Y = -v / (half * 1.2);
      const double q = X * X + Y * Y - 1.0;
      return q * q * q - X * X * Y * Y * Y <= 0.0;
    }
  }
}

void raster_sprites(Raster& r, const std::vector<SpriteSpec>& sprites,
                    bool binarized) {
  for (size_t i = 0; i < sprites.size(); ++i) {
    const std::uint8_t white[3] = {255, 255, 255};
    const std::uint8_t* color =
        binarized ? white : kObjectColors[sprites[i].color].data();
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x)
        if (sprite_contains(sprites[i], x, y))
          r.paint(x, y, static_cast<int>(i), color);
  }
}

std::vector<SpriteSpec> sprites_from_factors(const std::vector<ObjectFactors>& f,
                                             int object_count) {
  std::vector<SpriteSpec> out;
  for (int i = 0; i < object_count; ++i)
    out.push_back({f[i].shape_id, f[i].color_id, f[i].x, f[i].y, f[i].scale_pm,
                   f[i].angle_cd});
  return out;
}

}  // namespace

SceneRecord make_dsprites_record(bool binarized, Rng rng) {
  const int max_objects = binarized ? 3 : 5;
  const int n = 2 + static_cast<int>(rng.below(binarized ? 2 : 4));
  const std::uint8_t bg =
      binarized ? 0 : static_cast<std::uint8_t>(32 + rng.below(193));
  std::vector<SpriteSpec> sprites;
  for (int i = 0; i < n; ++i) {
    SpriteSpec s;
    s.shape = static_cast<int>(rng.below(3));
    s.color = binarized ? 0 : static_cast<int>(rng.below(6));
    s.scale_pm = 500 + static_cast<int>(rng.below(501));
    s.angle_cd = static_cast<int>(rng.below(36000));
    const double size = kSpriteBase * s.scale_pm / 1000.0;
    const int margin = static_cast<int>(std::ceil(size * 0.75)) + 1;
    s.cx = margin + static_cast<int>(
                        rng.below(static_cast<std::uint64_t>(kSpriteCanvas - 2 * margin)));
    s.cy = margin + static_cast<int>(
                        rng.below(static_cast<std::uint64_t>(kSpriteCanvas - 2 * margin)));
    sprites.push_back(s);
  }
  Raster r(kSpriteCanvas, kSpriteCanvas, binarized ? 1 : 3, bg);
  raster_sprites(r, sprites, binarized);
  std::vector<ObjectFactors> factors(sprites.size());
  for (size_t i = 0; i < sprites.size(); ++i) {
    factors[i].shape_id = static_cast<std::uint16_t>(sprites[i].shape);
    factors[i].color_id = static_cast<std::uint16_t>(sprites[i].color);
    factors[i].x = static_cast<std::uint16_t>(sprites[i].cx);
    factors[i].y = static_cast<std::uint16_t>(sprites[i].cy);
    factors[i].scale_pm = static_cast<std::uint16_t>(sprites[i].scale_pm);
    factors[i].angle_cd = static_cast<std::uint16_t>(sprites[i].angle_cd);
  }
  return finish_record(r, max_objects, n, std::move(factors));
}

std::vector<std::uint8_t> render_dsprites_image(bool binarized, std::uint8_t bg_gray,
                                                const std::vector<ObjectFactors>& f,
                                                int object_count) {
  Raster r(kSpriteCanvas, kSpriteCanvas, binarized ? 1 : 3,
           binarized ? std::uint8_t(0) : bg_gray);
  raster_sprites(r, sprites_from_factors(f, object_count), binarized);
  return r.image;
}

Dataset generate_multi_dsprites(std::int64_t n, std::uint64_t seed, bool binarized) {
  Dataset ds;
  ds.header = {binarized ? DatasetKind::kMultiDSpritesBin
                         : DatasetKind::kMultiDSprites,
               kSpriteCanvas, kSpriteCanvas, binarized ? 1 : 3,
               binarized ? 3 : 5, static_cast<std::uint64_t>(n), seed};
  Rng root(seed);
  ds.records.reserve(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    ds.records.push_back(make_dsprites_record(
        binarized, root.child(static_cast<std::uint64_t>(i))));
  return ds;
}

// ================================ shapes =================================

namespace {

constexpr int kShapesCanvas = 28;
constexpr int kShapeSize = 11;  // odd, so shapes have an integer center

struct ShapeSpec {
  int shape = 0, cx = 0, cy = 0;
};

bool shape_contains(const ShapeSpec& s, int px, int py) {
  const int half = kShapeSize / 2;
  const int dx = px - s.cx, dy = py - s.cy;
  if (dx < -half || dx > half || dy < -half || dy > half) return false;
  switch (s.shape) {
    case 0: {  // triangle, apex up
      const int row = dy + half;  // 0 at apex
      return std::abs(dx) <= row / 2;
    }
    case 1: {  // triangle, apex down
      const int row = half - dy;
      return std::abs(dx) <= row / 2;
    }
    default:
      return true;  // square
  }
}

void raster_shapes(Raster& r, const std::vector<ShapeSpec>& shapes) {
  const std::uint8_t white[1] = {255};
  for (size_t i = 0; i < shapes.size(); ++i)
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x)
        if (shape_contains(shapes[i], x, y))
          r.paint(x, y, static_cast<int>(i), white);
}

}  // namespace

SceneRecord make_shapes_record(Rng rng) {
  const int half = kShapeSize / 2;
  const int span = kShapesCanvas - 2 * half;
  std::vector<ShapeSpec> shapes;
  for (int i = 0; i < 3; ++i) {
    ShapeSpec s;
    s.shape = static_cast<int>(rng.below(3));
    s.cx = half + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    s.cy = half + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    shapes.push_back(s);
  }
  Raster r(kShapesCanvas, kShapesCanvas, 1, 0);
  raster_shapes(r, shapes);
  std::vector<ObjectFactors> factors(3);
  for (int i = 0; i < 3; ++i) {
    factors[i].shape_id = static_cast<std::uint16_t>(shapes[i].shape);
    factors[i].color_id = 0;
    factors[i].x = static_cast<std::uint16_t>(shapes[i].cx);
    factors[i].y = static_cast<std::uint16_t>(shapes[i].cy);
    factors[i].scale_pm = 0;  // fixed-size shapes: scale/angle are unused
    factors[i].angle_cd = 0;
  }
  return finish_record(r, 3, 3, std::move(factors));
}

std::vector<std::uint8_t> render_shapes_image(const std::vector<ObjectFactors>& f,
                                              int object_count) {
  std::vector<ShapeSpec> shapes;
  for (int i = 0; i < object_count; ++i)
    shapes.push_back({f[i].shape_id, f[i].x, f[i].y});
  Raster r(kShapesCanvas, kShapesCanvas, 1, 0);
  raster_shapes(r, shapes);
  return r.image;
}

Dataset generate_shapes(std::int64_t n, std::uint64_t seed) {
  Dataset ds;
  ds.header = {DatasetKind::kShapes, kShapesCanvas, kShapesCanvas, 1, 3,
               static_cast<std::uint64_t>(n), seed};
  Rng root(seed);
  ds.records.reserve(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    ds.records.push_back(make_shapes_record(root.child(static_cast<std::uint64_t>(i))));
  return ds;
}

Dataset generate_dataset(DatasetKind kind, std::int64_t n, std::uint64_t seed,
                         TetrisParams tetris) {
  switch (kind) {
    case DatasetKind::kTetris: return generate_tetris(n, seed, tetris);
    case DatasetKind::kMultiDSprites: return generate_multi_dsprites(n, seed, false);
    case DatasetKind::kMultiDSpritesBin: return generate_multi_dsprites(n, seed, true);
    case DatasetKind::kShapes: return generate_shapes(n, seed);
  }
  fail("unknown dataset kind");
  return {};
}

// ================================ file IO ================================

namespace {

constexpr char kMagic[4] = {'M', 'O', 'B', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::int64_t kHeaderBytes = 4 + 4 + 1 + 3 * 2 + 1 + 8 + 8;

std::int64_t record_bytes(const DatasetHeader& h) {
  const std::int64_t hw = static_cast<std::int64_t>(h.h) * h.w;
  return hw * h.c + 1 + static_cast<std::int64_t>(h.max_objects) * hw + hw +
         static_cast<std::int64_t>(h.max_objects) * 6 * 2;
}

void ds_fail(const std::string& path, const std::string& what) {
  fail("dataset '" + path + "': " + what);
}

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  const DatasetHeader& h = ds.header;
  if (ds.records.size() != h.count)
    ds_fail(path, "header count " + std::to_string(h.count) + " != records " +
                      std::to_string(ds.records.size()));
  const std::int64_t hw = static_cast<std::int64_t>(h.h) * h.w;
  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) ds_fail(path, "cannot open for writing");

  std::vector<std::uint8_t> head;
  head.insert(head.end(), kMagic, kMagic + 4);
  put(head, kVersion);
  put(head, static_cast<std::uint8_t>(h.kind));
  put(head, static_cast<std::uint16_t>(h.h));
  put(head, static_cast<std::uint16_t>(h.w));
  put(head, static_cast<std::uint16_t>(h.c));
  put(head, static_cast<std::uint8_t>(h.max_objects));
  put(head, h.count);
  put(head, h.seed);
  bool ok = std::fwrite(head.data(), 1, head.size(), f) == head.size();

  for (size_t i = 0; ok && i < ds.records.size(); ++i) {
    const SceneRecord& r = ds.records[i];
    if (static_cast<std::int64_t>(r.image.size()) != hw * h.c ||
        static_cast<std::int64_t>(r.masks.size()) != h.max_objects * hw ||
        static_cast<std::int64_t>(r.background.size()) != hw ||
        static_cast<int>(r.factors.size()) != h.max_objects) {
      std::fclose(f);
      std::remove(tmp.c_str());
      ds_fail(path, "record " + std::to_string(i) + " has inconsistent sizes");
    }
    ok = ok && std::fwrite(r.image.data(), 1, r.image.size(), f) == r.image.size();
    ok = ok && std::fwrite(&r.object_count, 1, 1, f) == 1;
    ok = ok && std::fwrite(r.masks.data(), 1, r.masks.size(), f) == r.masks.size();
    ok = ok && std::fwrite(r.background.data(), 1, r.background.size(), f) ==
                   r.background.size();
    for (const ObjectFactors& fa : r.factors) {
      const std::uint16_t vals[6] = {fa.shape_id, fa.color_id, fa.x,
                                     fa.y,        fa.scale_pm, fa.angle_cd};
      ok = ok && std::fwrite(vals, 2, 6, f) == 6;
    }
  }
  ok = ok && std::fclose(f) == 0;
  if (!ok) {
    std::remove(tmp.c_str());
    ds_fail(path, "write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    ds_fail(path, "rename from temporary failed");
}

DatasetReader::DatasetReader(const std::string& path) : path_(path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) ds_fail(path, "cannot open");
  file_ = f;
  std::uint8_t head[kHeaderBytes];
  if (std::fread(head, 1, kHeaderBytes, f) != kHeaderBytes)
    ds_fail(path, "truncated header (file shorter than " +
                      std::to_string(kHeaderBytes) + " bytes)");
  if (std::memcmp(head, kMagic, 4) != 0)
    ds_fail(path, "bad magic (not a dataset file)");
  std::uint32_t version;
  std::memcpy(&version, head + 4, 4);
  if (version != kVersion)
    ds_fail(path, "unsupported version " + std::to_string(version));
  const std::uint8_t kind = head[8];
  if (kind > 3) ds_fail(path, "unknown dataset kind " + std::to_string(kind));
  header_.kind = static_cast<DatasetKind>(kind);
  std::uint16_t dims[3];
  std::memcpy(dims, head + 9, 6);
  header_.h = dims[0];
  header_.w = dims[1];
  header_.c = dims[2];
  header_.max_objects = head[15];
  std::memcpy(&header_.count, head + 16, 8);
  std::memcpy(&header_.seed, head + 24, 8);
  record_bytes_ = record_bytes(header_);
  payload_offset_ = kHeaderBytes;

  // the whole payload must be present
  std::fseek(f, 0, SEEK_END);
  const std::int64_t size = std::ftell(f);
  const std::int64_t want =
      payload_offset_ + record_bytes_ * static_cast<std::int64_t>(header_.count);
  if (size != want)
    ds_fail(path, "file is " + std::to_string(size) + " bytes, expected " +
                      std::to_string(want) + " (" + std::to_string(header_.count) +
                      " records of " + std::to_string(record_bytes_) + " bytes)");
}

DatasetReader::~DatasetReader() {
  if (file_) std::fclose(static_cast<std::FILE*>(file_));
}

SceneRecord DatasetReader::read(std::int64_t index) {
  if (index < 0 || index >= static_cast<std::int64_t>(header_.count))
    ds_fail(path_, "record index " + std::to_string(index) + " out of range [0, " +
                       std::to_string(header_.count) + ")");
  std::FILE* f = static_cast<std::FILE*>(file_);
  const std::int64_t off = payload_offset_ + index * record_bytes_;
  if (std::fseek(f, static_cast<long>(off), SEEK_SET) != 0)
    ds_fail(path_, "seek to byte " + std::to_string(off) + " failed");
  std::vector<std::uint8_t> buf(static_cast<size_t>(record_bytes_));
  if (std::fread(buf.data(), 1, buf.size(), f) != buf.size())
    ds_fail(path_, "truncated at byte " + std::to_string(off) + " (record " +
                       std::to_string(index) + ")");
  const std::int64_t hw = static_cast<std::int64_t>(header_.h) * header_.w;
  SceneRecord r;
  const std::uint8_t* p = buf.data();
  r.image.assign(p, p + hw * header_.c);
  p += hw * header_.c;
  r.object_count = *p++;
  r.masks.assign(p, p + header_.max_objects * hw);
  p += header_.max_objects * hw;
  r.background.assign(p, p + hw);
  p += hw;
  r.factors.resize(static_cast<size_t>(header_.max_objects));
  for (ObjectFactors& fa : r.factors) {
    std::uint16_t vals[6];
    std::memcpy(vals, p, 12);
    p += 12;
    fa = {vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]};
  }
  return r;
}

Dataset load_dataset(const std::string& path) {
  DatasetReader reader(path);
  Dataset ds;
  ds.header = reader.header();
  ds.records.reserve(static_cast<size_t>(ds.header.count));
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.header.count); ++i)
    ds.records.push_back(reader.read(i));
  return ds;
}

}  // namespace slotvae
