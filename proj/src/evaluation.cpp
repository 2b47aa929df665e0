#include "slotvae/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "slotvae/random.hpp"

namespace slotvae {

namespace {

double comb2(double n) { return n * (n - 1.0) / 2.0; }

// dense labels -> contiguous 0..k-1 indices, insertion order
std::vector<int> compact(const std::vector<int>& labels, int* num_classes) {
  std::unordered_map<int, int> ids;
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    auto [it, fresh] = ids.emplace(labels[i], static_cast<int>(ids.size()));
    (void)fresh;
    out[i] = it->second;
  }
  *num_classes = static_cast<int>(ids.size());
  return out;
}

}  // namespace

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() || b.empty()) fail("adjusted_rand_index: empty labeling");
  if (a.size() != b.size())
    fail("adjusted_rand_index: length mismatch (" + std::to_string(a.size()) +
         " vs " + std::to_string(b.size()) + ")");
  int ka = 0, kb = 0;
  const std::vector<int> ca = compact(a, &ka), cb = compact(b, &kb);
  std::vector<double> table(static_cast<size_t>(ka) * kb, 0.0);
  std::vector<double> rows(static_cast<size_t>(ka), 0.0), cols(static_cast<size_t>(kb), 0.0);
  for (size_t i = 0; i < ca.size(); ++i) {
    table[static_cast<size_t>(ca[i]) * kb + cb[i]] += 1.0;
    rows[static_cast<size_t>(ca[i])] += 1.0;
    cols[static_cast<size_t>(cb[i])] += 1.0;
  }
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (double v : table) index += comb2(v);
  for (double v : rows) sum_rows += comb2(v);
  for (double v : cols) sum_cols += comb2(v);
  const double total = comb2(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sum_rows * sum_cols / total : 0.0;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index - expected == 0.0) return 1.0;  // both partitions trivial, equal
  return (index - expected) / (max_index - expected);
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  int k = 0;
  return compact(labels, &k);
}

SegmentationPair foreground_clustering(const DatasetHeader& header,
                                       const SceneRecord& record,
                                       const std::vector<int>& segmentation) {
  const std::int64_t hw = static_cast<std::int64_t>(header.h) * header.w;
  if (static_cast<std::int64_t>(segmentation.size()) != hw)
    fail("foreground_clustering: segmentation length " +
         std::to_string(segmentation.size()) + " != pixels " + std::to_string(hw));
  SegmentationPair out;
  for (std::int64_t p = 0; p < hw; ++p)
    for (int o = 0; o < record.object_count; ++o)
      if (record.masks[static_cast<size_t>(o) * hw + p]) {
        out.pred.push_back(segmentation[static_cast<size_t>(p)]);
        out.truth.push_back(o);
        break;  // visible masks are disjoint
      }
  return out;
}

std::vector<SlotMatch> match_slots_by_iou(const std::vector<int>& segmentation,
                                          int num_slots, const DatasetHeader& header,
                                          const SceneRecord& record) {
  if (record.object_count < 1) fail("match_slots_by_iou: record has no objects");
  const std::int64_t hw = static_cast<std::int64_t>(header.h) * header.w;
  const int num_objects = record.object_count;

  std::vector<std::int64_t> slot_size(static_cast<size_t>(num_slots), 0);
  for (int s : segmentation) ++slot_size[static_cast<size_t>(s)];
  std::vector<double> iou(static_cast<size_t>(num_objects) * num_slots, 0.0);
  for (int o = 0; o < num_objects; ++o) {
    std::int64_t obj_size = 0;
    std::vector<std::int64_t> inter(static_cast<size_t>(num_slots), 0);
    for (std::int64_t p = 0; p < hw; ++p)
      if (record.masks[static_cast<size_t>(o) * hw + p]) {
        ++obj_size;
        ++inter[static_cast<size_t>(segmentation[static_cast<size_t>(p)])];
      }
    for (int k = 0; k < num_slots; ++k) {
      const std::int64_t un = obj_size + slot_size[static_cast<size_t>(k)] - inter[k];
      iou[static_cast<size_t>(o) * num_slots + k] =
          un > 0 ? static_cast<double>(inter[k]) / static_cast<double>(un) : 0.0;
    }
  }

  std::vector<SlotMatch> out(static_cast<size_t>(num_objects));
  std::vector<bool> obj_done(static_cast<size_t>(num_objects), false);
  std::vector<bool> slot_done(static_cast<size_t>(num_slots), false);
  for (int o = 0; o < num_objects; ++o) out[static_cast<size_t>(o)].object = o;
  const int pairs = std::min(num_objects, num_slots);
  for (int step = 0; step < pairs; ++step) {
    int bo = -1, bk = -1;
    double best = -1.0;
    for (int o = 0; o < num_objects; ++o) {
      if (obj_done[static_cast<size_t>(o)]) continue;
      for (int k = 0; k < num_slots; ++k) {
        if (slot_done[static_cast<size_t>(k)]) continue;
        if (iou[static_cast<size_t>(o) * num_slots + k] > best) {
          best = iou[static_cast<size_t>(o) * num_slots + k];
          bo = o;
          bk = k;
        }
      }
    }
    if (best <= 0.0) break;  // leftover pairing below
    obj_done[static_cast<size_t>(bo)] = true;
    slot_done[static_cast<size_t>(bk)] = true;
    out[static_cast<size_t>(bo)] = {bo, bk, best};
  }
  int next_slot = 0;
  for (int o = 0; o < num_objects; ++o) {
    if (obj_done[static_cast<size_t>(o)]) continue;
    while (next_slot < num_slots && slot_done[static_cast<size_t>(next_slot)])
      ++next_slot;
    if (next_slot < num_slots) {
      slot_done[static_cast<size_t>(next_slot)] = true;
      out[static_cast<size_t>(o)] = {o, next_slot, 0.0};
    }  // else: more objects than slots, slot stays -1
  }
  return out;
}

// ============================ factor probes ===============================

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int kProbeSteps = 2000;
constexpr double kProbeLr = 0.1;

MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) fail("factor_probe: empty latent set");
  const auto d = rows[0].size();
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) fail("factor_probe: ragged latent rows");
    for (size_t j = 0; j < d; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

// standardized by train stats, plus a bias column of ones
MatrixXd design(const MatrixXd& x, const VectorXd& mu, const VectorXd& sd) {
  MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) =
      (x.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array();
  out.col(x.cols()).setOnes();
  return out;
}

double classifier_accuracy(const MatrixXd& xtr, const std::vector<int>& ytr,
                           const MatrixXd& xte, const std::vector<int>& yte,
                           int classes) {
  MatrixXd y = MatrixXd::Zero(xtr.rows(), classes);
  for (Eigen::Index i = 0; i < xtr.rows(); ++i)
    y(i, ytr[static_cast<size_t>(i)]) = 1.0;
  MatrixXd w = MatrixXd::Zero(xtr.cols(), classes);
  const double inv_n = 1.0 / static_cast<double>(xtr.rows());
  for (int step = 0; step < kProbeSteps; ++step) {
    MatrixXd logits = xtr * w;
    MatrixXd p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    w -= kProbeLr * inv_n * (xtr.transpose() * (p - y));
  }
  MatrixXd logits = xte * w;
  std::int64_t hits = 0;
  for (Eigen::Index i = 0; i < xte.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    hits += arg == yte[static_cast<size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(xte.rows());
}

double regression_r2(const MatrixXd& xtr, const MatrixXd& ytr, const MatrixXd& xte,
                     const MatrixXd& yte) {
  const VectorXd mu = ytr.colwise().mean();
  VectorXd sd = ((ytr.rowwise() - mu.transpose()).array().square().colwise().sum() /
                 static_cast<double>(ytr.rows()))
                    .sqrt();
  sd = sd.cwiseMax(1e-8);
  const MatrixXd ytr_std =
      (ytr.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array();
  MatrixXd w = MatrixXd::Zero(xtr.cols(), ytr.cols());
  const double inv_n = 1.0 / static_cast<double>(xtr.rows());
  for (int step = 0; step < kProbeSteps; ++step)
    w -= kProbeLr * inv_n * (xtr.transpose() * (xtr * w - ytr_std));
  MatrixXd pred =
      ((xte * w).array().rowwise() * sd.transpose().array()).rowwise() +
      mu.transpose().array();
  const VectorXd te_mean = yte.colwise().mean();
  const double sse = (pred - yte).squaredNorm();
  const double sst = (yte.rowwise() - te_mean.transpose()).squaredNorm();
  return sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
}

// maps raw factor values to dense class indices shared across both splits
std::vector<int> to_classes(const std::vector<int>& train_vals,
                            const std::vector<int>& test_vals,
                            std::vector<int>* test_out, int* classes) {
  std::vector<int> all = train_vals;
  all.insert(all.end(), test_vals.begin(), test_vals.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  auto idx = [&](int v) {
    return static_cast<int>(std::lower_bound(all.begin(), all.end(), v) - all.begin());
  };
  std::vector<int> train_out(train_vals.size());
  for (size_t i = 0; i < train_vals.size(); ++i) train_out[i] = idx(train_vals[i]);
  test_out->resize(test_vals.size());
  for (size_t i = 0; i < test_vals.size(); ++i) (*test_out)[i] = idx(test_vals[i]);
  *classes = static_cast<int>(all.size());
  return train_out;
}

bool varies(const std::vector<int>& vals) {
  for (size_t i = 1; i < vals.size(); ++i)
    if (vals[i] != vals[0]) return true;
  return false;
}

}  // namespace

ProbeResult factor_probe(const ProbeData& train, const ProbeData& test) {
  if (train.latents.size() != train.factors.size() ||
      test.latents.size() != test.factors.size())
    fail("factor_probe: latents and factors must align");
  if (train.latents.size() < 100)
    fail("factor_probe: need at least 100 training pairs, got " +
         std::to_string(train.latents.size()));
  if (test.latents.empty()) fail("factor_probe: empty test split");

  const MatrixXd xtr_raw = to_matrix(train.latents);
  const MatrixXd xte_raw = to_matrix(test.latents);
  if (xtr_raw.cols() != xte_raw.cols())
    fail("factor_probe: train/test latent widths differ");
  const VectorXd mu = xtr_raw.colwise().mean();
  VectorXd sd = ((xtr_raw.rowwise() - mu.transpose()).array().square().colwise().sum() /
                 static_cast<double>(xtr_raw.rows()))
                    .sqrt();
  sd = sd.cwiseMax(1e-8);
  const MatrixXd xtr = design(xtr_raw, mu, sd);
  const MatrixXd xte = design(xte_raw, mu, sd);

  auto gather = [](const std::vector<ObjectFactors>& fs, auto pick) {
    std::vector<int> out(fs.size());
    for (size_t i = 0; i < fs.size(); ++i) out[i] = pick(fs[i]);
    return out;
  };

  ProbeResult res;
  {
    auto tr = gather(train.factors, [](const ObjectFactors& f) { return int(f.shape_id); });
    auto te = gather(test.factors, [](const ObjectFactors& f) { return int(f.shape_id); });
    res.has_shape = varies(tr);
    if (res.has_shape) {
      std::vector<int> te_idx;
      int classes = 0;
      auto tr_idx = to_classes(tr, te, &te_idx, &classes);
      res.shape_accuracy = classifier_accuracy(xtr, tr_idx, xte, te_idx, classes);
    }
  }
  {
    auto tr = gather(train.factors, [](const ObjectFactors& f) { return int(f.color_id); });
    auto te = gather(test.factors, [](const ObjectFactors& f) { return int(f.color_id); });
    res.has_color = varies(tr);
    if (res.has_color) {
      std::vector<int> te_idx;
      int classes = 0;
      auto tr_idx = to_classes(tr, te, &te_idx, &classes);
      res.color_accuracy = classifier_accuracy(xtr, tr_idx, xte, te_idx, classes);
    }
  }
  {
    MatrixXd ytr(xtr.rows(), 2), yte(xte.rows(), 2);
    for (size_t i = 0; i < train.factors.size(); ++i) {
      ytr(static_cast<Eigen::Index>(i), 0) = train.factors[i].x;
      ytr(static_cast<Eigen::Index>(i), 1) = train.factors[i].y;
    }
    for (size_t i = 0; i < test.factors.size(); ++i) {
      yte(static_cast<Eigen::Index>(i), 0) = test.factors[i].x;
      yte(static_cast<Eigen::Index>(i), 1) = test.factors[i].y;
    }
    res.position_r2 = regression_r2(xtr, ytr, xte, yte);
  }
  {
    auto tr = gather(train.factors, [](const ObjectFactors& f) { return int(f.scale_pm); });
    res.has_scale = varies(tr);
    if (res.has_scale) {
      MatrixXd ytr(xtr.rows(), 1), yte(xte.rows(), 1);
      for (size_t i = 0; i < train.factors.size(); ++i)
        ytr(static_cast<Eigen::Index>(i), 0) = train.factors[i].scale_pm;
      for (size_t i = 0; i < test.factors.size(); ++i)
        yte(static_cast<Eigen::Index>(i), 0) = test.factors[i].scale_pm;
      res.scale_r2 = regression_r2(xtr, ytr, xte, yte);
    }
  }
  return res;
}

// ============================ PCA projection ==============================

PcaResult pca_project(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 3)
    fail("pca_project: need at least 3 rows, got " + std::to_string(rows.size()));
  MatrixXd x = to_matrix(rows);
  const Eigen::Index n = x.rows(), d = x.cols();
  x.rowwise() -= x.colwise().mean().eval();
  const double total_var = x.squaredNorm() / static_cast<double>(n - 1);

  PcaResult out;
  out.coords.assign(static_cast<size_t>(n), {0.0, 0.0});
  out.components[0].assign(static_cast<size_t>(d), 0.0);
  out.components[1].assign(static_cast<size_t>(d), 0.0);

  Rng rng = Rng(0x9e3779b97f4a7c15ull).child("pca");
  bool deficient = false;
  for (int comp = 0; comp < 2 && !deficient; ++comp) {
    Rng crng = rng.child(static_cast<std::uint64_t>(comp));
    VectorXd v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = crng.normal();
    v.normalize();
    for (int iter = 0; iter < 1000; ++iter) {
      VectorXd w = x.transpose() * (x * v);
      const double norm = w.norm();
      if (norm < 1e-300) {
        v.setZero();
        break;
      }
      w /= norm;
      const double delta = std::min((w - v).norm(), (w + v).norm());
      v = w;
      if (delta < 1e-13) break;
    }
    VectorXd proj = x * v;
    const double lambda = proj.squaredNorm() / static_cast<double>(n - 1);
    if (total_var <= 0.0 || lambda <= total_var * 1e-12) {
      deficient = true;
      break;  // this and later components stay zeroed
    }
    // sign convention: largest-|loading| entry positive, ties to lowest index
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) {
      v = -v;
      proj = -proj;
    }
    for (Eigen::Index j = 0; j < d; ++j)
      out.components[static_cast<size_t>(comp)][static_cast<size_t>(j)] = v(j);
    for (Eigen::Index i = 0; i < n; ++i)
      out.coords[static_cast<size_t>(i)][static_cast<size_t>(comp)] = proj(i);
    out.explained[static_cast<size_t>(comp)] = lambda / total_var;
    x -= proj * v.transpose();
  }
  if (deficient) {
    out.rank_deficient = true;
    std::fprintf(stderr,
                 "warning: pca_project input has rank < 2; remaining "
                 "component(s) zeroed\n");
  }
  return out;
}

// ========================= summary statistics =============================

double percentile(std::vector<double> values, double p) {
  if (values.empty()) fail("percentile: empty input");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(h);
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

CurvePoint quartiles(const std::vector<double>& values) {
  return {percentile(values, 0.5), percentile(values, 0.25), percentile(values, 0.75)};
}

}  // namespace slotvae
