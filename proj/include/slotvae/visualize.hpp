#pragma once

// Composable figure builders over inference traces: decomposition strips,
// per-iteration rows, traversal strips, and multi-stability grids, all as
// plain u8 RGB images ready for the PPM writer.

#include <vector>

#include "slotvae/evaluation.hpp"
#include "slotvae/image.hpp"
#include "slotvae/inference.hpp"

namespace slotvae {

// input | reconstruction | colored segmentation | per-slot masked
// reconstructions framed in the slot's palette color: 2 + 1 + K tiles.
template <typename S>
ImageU8 decomposition_strip(const Tensor<S>& x, const InferenceTrace<S>& trace) {
  const std::int64_t K = trace.final_masks.shape[0];
  const std::int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
  std::vector<ImageU8> tiles;
  tiles.push_back(to_u8_image(x));
  tiles.push_back(to_u8_image(trace.final_recon));
  tiles.push_back(colorize_segmentation(argmax_segmentation(trace.final_masks),
                                        static_cast<int>(H), static_cast<int>(W)));
  const std::int64_t chw = C * H * W, hw = H * W;
  for (std::int64_t k = 0; k < K; ++k) {
    Tensor<S> masked(
        {static_cast<int>(C), static_cast<int>(H), static_cast<int>(W)});
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t p = 0; p < hw; ++p)
        masked[c * hw + p] = trace.final_means.data[k * chw + c * hw + p] *
                             trace.final_masks.data[k * hw + p];
    ImageU8 tile = to_u8_image(masked);
    draw_border(tile, kSlotPalette[static_cast<size_t>(k) % kSlotPalette.size()]);
    tiles.push_back(std::move(tile));
  }
  return hstack_images(tiles);
}

// one row per refinement iteration: reconstruction | segmentation; the trace
// must have been run with record_tensors so per-iteration decodes exist
template <typename S>
ImageU8 iteration_rows(const InferenceTrace<S>& trace) {
  if (trace.iters.empty() || trace.iters[0].means.numel() == 0)
    fail("iteration_rows: trace has no recorded per-iteration tensors");
  std::vector<ImageU8> rows;
  for (const IterRecord<S>& it : trace.iters) {
    const std::int64_t H = it.masks.shape[2], W = it.masks.shape[3];
    std::vector<ImageU8> tiles;
    tiles.push_back(to_u8_image(combine_slots(it.means, it.masks)));
    tiles.push_back(colorize_segmentation(argmax_segmentation(it.masks),
                                          static_cast<int>(H), static_cast<int>(W)));
    rows.push_back(hstack_images(tiles));
  }
  return vstack_images(rows);
}

// one tile per traversed setting, left to right
template <typename S>
ImageU8 traversal_strip(const TraversalResult<S>& traversal) {
  if (traversal.frames.empty()) fail("traversal_strip: no frames");
  std::vector<ImageU8> tiles;
  for (const Tensor<S>& frame : traversal.frames) tiles.push_back(to_u8_image(frame));
  return hstack_images(tiles);
}

// one row per seed: the canonicalized segmentation next to the input
template <typename S>
ImageU8 stability_grid(const Tensor<S>& x, const StabilityResult& stability) {
  if (stability.segmentations.empty()) fail("stability_grid: no segmentations");
  const int H = static_cast<int>(x.shape[1]), W = static_cast<int>(x.shape[2]);
  std::vector<ImageU8> rows;
  for (const std::vector<int>& seg : stability.segmentations) {
    std::vector<ImageU8> tiles;
    tiles.push_back(to_u8_image(x));
    tiles.push_back(colorize_segmentation(seg, H, W));
    rows.push_back(hstack_images(tiles));
  }
  return vstack_images(rows);
}

}  // namespace slotvae
