#pragma once

// Metrics and analyses over trained models: foreground adjusted Rand index,
// slot-object matching, per-iteration MSE/KL/ARI curves, linear factor
// probes, latent traversals, PCA projection of object latents, and
// multi-stability mode counting.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slotvae/datasets.hpp"
#include "slotvae/inference.hpp"

namespace slotvae {

// ======================= clustering & Rand index ==========================

// Contingency-table adjusted Rand index between two labelings of the same
// points. Labels need not be contiguous. The degenerate case where the
// adjustment denominator vanishes (both partitions trivial and equal)
// returns 1. Fails on empty or mismatched inputs.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// Relabels by order of first occurrence (first distinct label seen -> 0,
// second -> 1, ...), canonicalizing a segmentation up to label permutation.
std::vector<int> canonical_labels(const std::vector<int>& labels);

// Per-pixel argmax over slot masks [K,1,H,W]; ties broken by lowest slot.
template <typename S>
std::vector<int> argmax_segmentation(const Tensor<S>& masks) {
  if (masks.shape.size() != 4 || masks.shape[1] != 1)
    fail("argmax_segmentation: expected masks [K,1,H,W]");
  const std::int64_t k = masks.shape[0], hw = masks.shape[2] * masks.shape[3];
  std::vector<int> seg(static_cast<size_t>(hw), 0);
  for (std::int64_t p = 0; p < hw; ++p) {
    S best = masks.data[p];
    for (std::int64_t j = 1; j < k; ++j)
      if (masks.data[j * hw + p] > best) {
        best = masks.data[j * hw + p];
        seg[p] = static_cast<int>(j);
      }
  }
  return seg;
}

// Predicted and ground-truth labels over the ground-truth foreground pixels
// (pixels covered by any object mask), aligned index-for-index.
struct SegmentationPair {
  std::vector<int> pred;
  std::vector<int> truth;
};

SegmentationPair foreground_clustering(const DatasetHeader& header,
                                       const SceneRecord& record,
                                       const std::vector<int>& segmentation);

// ARI restricted to ground-truth foreground pixels; labels are argmax slots.
// Scenes with fewer than two foreground pixels score the degenerate 1.
template <typename S>
double foreground_ari(const DatasetHeader& header, const SceneRecord& record,
                      const Tensor<S>& masks) {
  SegmentationPair pair =
      foreground_clustering(header, record, argmax_segmentation(masks));
  if (pair.pred.empty()) return 1.0;
  return adjusted_rand_index(pair.pred, pair.truth);
}

// ========================= slot-object matching ===========================

struct SlotMatch {
  int object = -1;
  int slot = -1;    // -1 when more objects than slots
  double iou = 0.0; // intersection-over-union of argmax region vs object mask
};

// Greedy maximum-IoU matching between binarized (argmax) slot regions and
// ground-truth object masks; each object gets at most one slot and vice
// versa. Objects left without any overlapping slot are paired with leftover
// slots in index order at IoU 0 so every object yields a latent to probe.
std::vector<SlotMatch> match_slots_by_iou(
    const std::vector<int>& segmentation, int num_slots,
    const DatasetHeader& header, const SceneRecord& record);

template <typename S>
std::vector<SlotMatch> match_slots_to_objects(const Tensor<S>& masks,
                                              const DatasetHeader& header,
                                              const SceneRecord& record) {
  return match_slots_by_iou(argmax_segmentation(masks),
                            static_cast<int>(masks.shape[0]), header, record);
}

// ============================ factor probes ===============================

// Matched (latent, factors) pairs harvested from inference traces.
struct ProbeData {
  std::vector<std::vector<double>> latents;  // one row per object, length M
  std::vector<ObjectFactors> factors;        // aligned with latents
};

struct ProbeResult {
  double shape_accuracy = 0.0;   // categorical
  double color_accuracy = 0.0;   // categorical
  double position_r2 = 0.0;      // regression on (x, y), pooled R^2
  double scale_r2 = 0.0;         // regression on scale_pm
  bool has_shape = false;        // factor varies in the training split
  bool has_color = false;
  bool has_scale = false;
};

// One linear head per factor trained by full-batch gradient descent
// (2000 steps, learning rate 0.1) on standardized latents: softmax-linear
// classification for shape/color, least-squares regression for position and
// scale. Scores are computed on the held-out split. Fails with fewer than
// 100 training pairs.
ProbeResult factor_probe(const ProbeData& train, const ProbeData& test);

// ============================ PCA projection ==============================

struct PcaResult {
  std::vector<std::array<double, 2>> coords;       // mean-centered projections
  std::array<double, 2> explained{0.0, 0.0};       // variance fractions
  std::array<std::vector<double>, 2> components;   // unit loading vectors
  bool rank_deficient = false;                     // second component zeroed
};

// Top-2 principal components via iterated power method with deflation.
// Deterministic sign convention: the largest-magnitude loading entry of each
// component is made positive (ties broken by lowest index). Rank-deficient
// inputs zero the second (or both) components with a warning on stderr.
// Fails with fewer than 3 rows.
PcaResult pca_project(const std::vector<std::vector<double>>& rows);

// ======================= whole-record evaluation ==========================

struct RecordEval {
  double ari = 0.0;  // foreground ARI of the final (mean-decode) masks
  double mse = 0.0;  // reconstruction MSE of the final mean decode
  double kl = 0.0;   // KL of the last refinement iteration
};

template <typename S>
RecordEval evaluate_record(const ParamStore<S>& params, const ModelConfig& cfg,
                           const DatasetHeader& header, const SceneRecord& record,
                           InferenceOptions<S> opt, Rng rng) {
  const Tensor<S> x = record_to_image<S>(header, record);
  opt.final_refine = true;
  InferenceTrace<S> trace = run_inference(x, params, cfg, opt, rng);
  RecordEval out;
  out.ari = foreground_ari(header, record, trace.final_masks);
  out.mse = static_cast<double>(
      reconstruction_mse(x, trace.final_means, trace.final_masks));
  out.kl = trace.iters.back().kl;
  return out;
}

// ======================== per-iteration curves ============================

struct CurvePoint {
  double median = 0.0, q25 = 0.0, q75 = 0.0;
};

struct IterationCurves {
  std::vector<CurvePoint> mse, kl, ari;  // one entry per refinement iteration
};

double percentile(std::vector<double> values, double p);  // linear interpolation
CurvePoint quartiles(const std::vector<double>& values);

// Runs inference at (K_eval, T_eval) over a dataset slice and reports the
// median and quartiles of per-iteration reconstruction MSE (mixture mean vs
// input), KL, and foreground ARI. T_eval beyond the trained horizon is fine.
template <typename S>
IterationCurves mse_kl_curves(const ParamStore<S>& params, const ModelConfig& cfg,
                              DatasetReader& data, std::int64_t first,
                              std::int64_t count, int k_eval, int t_eval,
                              std::uint64_t seed) {
  std::vector<std::vector<double>> mse(static_cast<size_t>(t_eval)),
      kl(static_cast<size_t>(t_eval)), ari(static_cast<size_t>(t_eval));
  Rng root(seed);
  for (std::int64_t i = 0; i < count; ++i) {
    const SceneRecord rec = data.read(first + i);
    const Tensor<S> x = record_to_image<S>(data.header(), rec);
    InferenceOptions<S> opt;
    opt.K = k_eval;
    opt.T = t_eval;
    opt.final_refine = false;  // curves read the per-iteration decodes
    opt.record_tensors = true;
    InferenceTrace<S> trace =
        run_inference(x, params, cfg, opt, root.child(static_cast<std::uint64_t>(i)));
    for (int t = 0; t < t_eval; ++t) {
      const IterRecord<S>& it = trace.iters[static_cast<size_t>(t)];
      kl[t].push_back(it.kl);
      mse[t].push_back(
          static_cast<double>(reconstruction_mse(x, it.means, it.masks)));
      ari[t].push_back(foreground_ari(data.header(), rec, it.masks));
    }
  }
  IterationCurves out;
  for (int t = 0; t < t_eval; ++t) {
    out.mse.push_back(quartiles(mse[t]));
    out.kl.push_back(quartiles(kl[t]));
    out.ari.push_back(quartiles(ari[t]));
  }
  return out;
}

// ========================== latent traversals =============================

// Per-dimension KL summed over slots, sorted descending — used to rank which
// latent dimensions carry information before traversing them.
template <typename S>
std::vector<std::pair<int, S>> kl_per_dimension(const Tensor<S>& mean,
                                                const Tensor<S>& raw_scale) {
  if (mean.shape != raw_scale.shape || mean.shape.size() != 2)
    fail("kl_per_dimension: expected matching [K,M] tensors");
  const std::int64_t k = mean.shape[0], m = mean.shape[1];
  std::vector<std::pair<int, S>> out(static_cast<size_t>(m));
  for (std::int64_t d = 0; d < m; ++d) {
    S total = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      const S mu = mean.data[j * m + d];
      const S sig = static_cast<S>(
          std::log1p(std::exp(static_cast<double>(raw_scale.data[j * m + d]))) +
          1e-6);
      total += S(0.5) * (mu * mu + sig * sig - S(1)) - std::log(sig);
    }
    out[static_cast<size_t>(d)] = {static_cast<int>(d), total};
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return out;
}

template <typename S>
struct TraversalResult {
  std::vector<S> values;              // traversed settings of z[slot, dim]
  std::vector<Tensor<S>> frames;      // combined reconstruction per setting
  std::vector<Tensor<S>> slot_means;  // per-slot decode [K,C,H,W] per setting
};

// Replaces z[slot, dim] by an even grid over [lo, hi], re-decodes all slots,
// and renders the mixture-mean reconstruction for each setting. Slots other
// than `slot` decode bit-identically across frames.
template <typename S>
TraversalResult<S> latent_traversal(const ParamStore<S>& params,
                                    const ModelConfig& cfg, const Tensor<S>& z,
                                    int slot, int dim, S lo = S(-2), S hi = S(2),
                                    int steps = 7) {
  if (z.shape.size() != 2 || z.shape[1] != cfg.latent)
    fail("latent_traversal: expected z of shape [K,latent]");
  if (slot < 0 || slot >= z.shape[0] || dim < 0 || dim >= cfg.latent)
    fail("latent_traversal: slot or dimension out of range");
  if (steps < 1) fail("latent_traversal: steps must be >= 1");
  TraversalResult<S> out;
  for (int s = 0; s < steps; ++s) {
    const S v = steps == 1 ? lo : lo + (hi - lo) * S(s) / S(steps - 1);
    Tensor<S> zs = z;
    zs.data[static_cast<std::int64_t>(slot) * cfg.latent + dim] = v;
    Graph<S> g;
    ParamBinding<S> bind;
    DecodeResult<S> dec = decode_slots(g, g.constant(zs), params, bind, cfg);
    const Tensor<S> masks = normalize_masks(dec.mask_logits).val();
    out.values.push_back(v);
    out.frames.push_back(combine_slots(dec.means.val(), masks));
    out.slot_means.push_back(dec.means.val());
  }
  return out;
}

// ========================== multi-stability ===============================

struct StabilityResult {
  std::vector<std::vector<int>> segmentations;  // canonical labels per seed
  std::vector<int> mode_of;                     // seed -> mode id
  int modes = 0;                                // distinct canonical outcomes
};

// Runs inference num_seeds times with distinct sampling streams and counts
// the distinct final segmentations after canonicalizing away slot order.
template <typename S>
StabilityResult multi_stability_eval(const ParamStore<S>& params,
                                     const ModelConfig& cfg, const Tensor<S>& image,
                                     InferenceOptions<S> opt, int num_seeds,
                                     std::uint64_t seed) {
  if (num_seeds < 1) fail("multi_stability_eval: need at least one seed");
  StabilityResult out;
  std::map<std::vector<int>, int> seen;
  Rng root(seed);
  for (int i = 0; i < num_seeds; ++i) {
    InferenceTrace<S> trace = run_inference(
        image, params, cfg, opt, root.child(static_cast<std::uint64_t>(i)));
    std::vector<int> canon =
        canonical_labels(argmax_segmentation(trace.final_masks));
    auto [it, fresh] = seen.emplace(canon, out.modes);
    if (fresh) ++out.modes;
    out.mode_of.push_back(it->second);
    out.segmentations.push_back(std::move(canon));
  }
  return out;
}

}  // namespace slotvae
