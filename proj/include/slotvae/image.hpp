#pragma once

// PPM (P6) image IO and small compositing helpers for visualization strips:
// u8 RGB buffers in row-major H x W x 3 layout throughout.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "slotvae/tensor.hpp"

namespace slotvae {

struct ImageU8 {
  int h = 0, w = 0;
  std::vector<std::uint8_t> rgb;  // H*W*3
};

// Binary P6: "P6\n<W> <H>\n255\n" followed by raw RGB rows; bit-exact.
void write_ppm(const ImageU8& image, const std::string& path);

// Reference P6 reader (handles whitespace and '#' comments in the header).
ImageU8 read_ppm(const std::string& path);

// [C,H,W] float image in [0,1] -> u8 RGB; C=1 is replicated across channels.
template <typename S>
ImageU8 to_u8_image(const Tensor<S>& img) {
  if (img.shape.size() != 3 || (img.shape[0] != 1 && img.shape[0] != 3))
    fail("to_u8_image: expected [C,H,W] with C in {1,3}");
  const std::int64_t c = img.shape[0], h = img.shape[1], w = img.shape[2];
  ImageU8 out;
  out.h = static_cast<int>(h);
  out.w = static_cast<int>(w);
  out.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const std::int64_t src = (c == 1 ? 0 : ch) * h * w + y * w + x;
        double v = static_cast<double>(img.data[src]);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        out.rgb[(static_cast<size_t>(y) * w + x) * 3 + ch] =
            static_cast<std::uint8_t>(v * 255.0 + 0.5);
      }
  return out;
}

// u8 HWC dataset image (C in {1,3}) -> u8 RGB
ImageU8 dataset_to_u8_image(int h, int w, int c, const std::vector<std::uint8_t>& hwc);

// fixed palette indexed by slot id for segmentation rendering
extern const std::array<std::array<std::uint8_t, 3>, 10> kSlotPalette;

// per-pixel labels -> palette colors (label mod palette size)
ImageU8 colorize_segmentation(const std::vector<int>& labels, int h, int w);

// side-by-side / stacked composition with a light separator between tiles;
// all tiles must share dimensions along the joined axis
ImageU8 hstack_images(const std::vector<ImageU8>& tiles, int separator = 2);
ImageU8 vstack_images(const std::vector<ImageU8>& rows, int separator = 2);

// draws a colored frame (in place) around the image border
void draw_border(ImageU8& image, const std::array<std::uint8_t, 3>& color,
                 int thickness = 2);

}  // namespace slotvae
