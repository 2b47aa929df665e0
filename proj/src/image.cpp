#include "slotvae/image.hpp"

#include <cctype>
#include <cstdio>

namespace slotvae {

void write_ppm(const ImageU8& image, const std::string& path) {
  if (image.h <= 0 || image.w <= 0 ||
      image.rgb.size() != static_cast<size_t>(image.h) * image.w * 3)
    fail("write_ppm: invalid image dimensions for '" + path + "'");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail("write_ppm: cannot open '" + path + "'");
  const std::string header =
      "P6\n" + std::to_string(image.w) + " " + std::to_string(image.h) + "\n255\n";
  bool ok = std::fwrite(header.data(), 1, header.size(), f) == header.size();
  ok = ok && std::fwrite(image.rgb.data(), 1, image.rgb.size(), f) == image.rgb.size();
  ok = (std::fclose(f) == 0) && ok;
  if (!ok) fail("write_ppm: write to '" + path + "' failed");
}

namespace {

// reads one whitespace/comment-separated unsigned integer from a P6 header
int next_header_int(std::FILE* f, const std::string& path) {
  int c = std::fgetc(f);
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = std::fgetc(f);
    c = std::fgetc(f);
  }
  if (c == EOF || !std::isdigit(c)) fail("read_ppm: malformed header in '" + path + "'");
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1 << 24) fail("read_ppm: header value out of range in '" + path + "'");
    c = std::fgetc(f);
  }
  if (c != EOF) std::ungetc(c, f);
  return static_cast<int>(v);
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail("read_ppm: cannot open '" + path + "'");
  char magic[2] = {0, 0};
  if (std::fread(magic, 1, 2, f) != 2 || magic[0] != 'P' || magic[1] != '6')
    fail("read_ppm: '" + path + "' is not a P6 file");
  ImageU8 out;
  out.w = next_header_int(f, path);
  out.h = next_header_int(f, path);
  const int maxval = next_header_int(f, path);
  if (maxval != 255) fail("read_ppm: unsupported maxval in '" + path + "'");
  std::fgetc(f);  // the single whitespace byte after maxval
  out.rgb.resize(static_cast<size_t>(out.h) * out.w * 3);
  if (std::fread(out.rgb.data(), 1, out.rgb.size(), f) != out.rgb.size())
    fail("read_ppm: truncated pixel data in '" + path + "'");
  std::fclose(f);
  return out;
}

ImageU8 dataset_to_u8_image(int h, int w, int c,
                            const std::vector<std::uint8_t>& hwc) {
  if ((c != 1 && c != 3) || hwc.size() != static_cast<size_t>(h) * w * c)
    fail("dataset_to_u8_image: bad dimensions");
  ImageU8 out;
  out.h = h;
  out.w = w;
  out.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * w; ++p)
    for (int ch = 0; ch < 3; ++ch)
      out.rgb[p * 3 + ch] = hwc[p * c + (c == 1 ? 0 : ch)];
  return out;
}

const std::array<std::array<std::uint8_t, 3>, 10> kSlotPalette = {{
    {230, 25, 75},    // red
    {60, 180, 75},    // green
    {0, 130, 200},    // blue
    {255, 225, 25},   // yellow
    {145, 30, 180},   // purple
    {70, 240, 240},   // cyan
    {245, 130, 48},   // orange
    {240, 50, 230},   // magenta
    {210, 245, 60},   // lime
    {170, 110, 40},   // brown
}};

ImageU8 colorize_segmentation(const std::vector<int>& labels, int h, int w) {
  if (labels.size() != static_cast<size_t>(h) * w)
    fail("colorize_segmentation: label count does not match dimensions");
  ImageU8 out;
  out.h = h;
  out.w = w;
  out.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (size_t p = 0; p < labels.size(); ++p) {
    const auto& c = kSlotPalette[static_cast<size_t>(labels[p]) % kSlotPalette.size()];
    for (int ch = 0; ch < 3; ++ch) out.rgb[p * 3 + ch] = c[ch];
  }
  return out;
}

namespace {
constexpr std::uint8_t kSeparatorGray = 255;
}

ImageU8 hstack_images(const std::vector<ImageU8>& tiles, int separator) {
  if (tiles.empty()) fail("hstack_images: no tiles");
  ImageU8 out;
  out.h = tiles[0].h;
  for (const ImageU8& t : tiles) {
    if (t.h != out.h) fail("hstack_images: tile heights differ");
    out.w += t.w;
  }
  out.w += separator * static_cast<int>(tiles.size() - 1);
  out.rgb.assign(static_cast<size_t>(out.h) * out.w * 3, kSeparatorGray);
  int x0 = 0;
  for (const ImageU8& t : tiles) {
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x)
        for (int ch = 0; ch < 3; ++ch)
          out.rgb[(static_cast<size_t>(y) * out.w + x0 + x) * 3 + ch] =
              t.rgb[(static_cast<size_t>(y) * t.w + x) * 3 + ch];
    x0 += t.w + separator;
  }
  return out;
}

ImageU8 vstack_images(const std::vector<ImageU8>& rows, int separator) {
  if (rows.empty()) fail("vstack_images: no rows");
  ImageU8 out;
  out.w = rows[0].w;
  for (const ImageU8& r : rows) {
    if (r.w != out.w) fail("vstack_images: row widths differ");
    out.h += r.h;
  }
  out.h += separator * static_cast<int>(rows.size() - 1);
  out.rgb.assign(static_cast<size_t>(out.h) * out.w * 3, kSeparatorGray);
  int y0 = 0;
  for (const ImageU8& r : rows) {
    std::copy(r.rgb.begin(), r.rgb.end(),
              out.rgb.begin() + static_cast<size_t>(y0) * out.w * 3);
    y0 += r.h + separator;
  }
  return out;
}

void draw_border(ImageU8& image, const std::array<std::uint8_t, 3>& color,
                 int thickness) {
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      const bool edge = y < thickness || x < thickness || y >= image.h - thickness ||
                        x >= image.w - thickness;
      if (!edge) continue;
      for (int ch = 0; ch < 3; ++ch)
        image.rgb[(static_cast<size_t>(y) * image.w + x) * 3 + ch] = color[ch];
    }
}

}  // namespace slotvae
