// End-to-end acceptance gate. Runs ten checks covering gradient correctness,
// mixture invariants, the clustering-metric oracle, the stop-gradient policy,
// optimization smoke behavior, desk-scale segmentation quality, test-time
// generalization, determinism, dataset integrity, and the multi-stability
// harness. Prints one PASS/FAIL line per criterion and exits nonzero if any
// fail.
//
// Criteria 6, 7, and 10 need a 20k-update training run. Its artifacts
// (datasets, checkpoints, metrics) live under --cache-dir and are reused
// across invocations; training resumes from the latest checkpoint if
// interrupted. Run `acceptance --prepare` to build the cache ahead of time —
// otherwise the first full invocation builds it inline, which takes hours.
//
// Usage:
//   acceptance [--cache-dir DIR] [--fixture-dir DIR] [--prepare]
//              [--criteria 1,2,...]

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "slotvae/datasets.hpp"
#include "slotvae/decoder.hpp"
#include "slotvae/evaluation.hpp"
#include "slotvae/gradcheck.hpp"
#include "slotvae/inference.hpp"
#include "slotvae/model.hpp"
#include "slotvae/ops.hpp"
#include "slotvae/params.hpp"
#include "slotvae/random.hpp"
#include "slotvae/train_loop.hpp"
#include "slotvae/training.hpp"

namespace fs = std::filesystem;
using namespace slotvae;

namespace {

using T64 = Tensor<double>;
using V64 = Var<double>;
using G64 = Graph<double>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double rel_err(double a, double b) {
  const double denom = std::max({1e-6, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

// ========================= shared model helpers ===========================

ModelConfig toy_config() {
  ModelConfig m;
  m.latent = 8;
  m.img_c = 3;
  m.img_h = m.img_w = 8;
  m.dec_layers = 2;
  m.dec_width = 8;
  m.dec_kernel = 3;
  m.ref_layers = 1;
  m.ref_width = 8;
  m.ref_kernel = 3;
  m.ref_stride = 2;
  m.ref_mlp = 16;
  m.ref_lstm = 0;
  return m;
}

T64 random_image(const ModelConfig& cfg, Rng rng) {
  T64 x({cfg.img_c, cfg.img_h, cfg.img_w});
  rng.fill_uniform(x, 0.0, 1.0);
  return x;
}

double loss_value(const T64& x, const ParamStore<double>& ps,
                  const ModelConfig& cfg, const InferenceOptions<double>& io,
                  Rng rng) {
  InferenceTrace<double> tr = run_inference(x, ps, cfg, io, rng);
  return total_loss(tr).val()[0];
}

GradMap<double> analytic_grads(const T64& x, const ParamStore<double>& ps,
                               const ModelConfig& cfg,
                               const InferenceOptions<double>& io, Rng rng) {
  InferenceTrace<double> tr = run_inference(x, ps, cfg, io, rng);
  V64 loss = total_loss(tr);
  tr.graph->backward(loss.id);
  GradMap<double> grads;
  tr.binding.accumulate_grads(*tr.graph, grads, 1.0);
  return grads;
}

double fd_grad(const T64& x, ParamStore<double> ps, const ModelConfig& cfg,
               const InferenceOptions<double>& io, Rng rng,
               const std::string& name, std::int64_t idx, double h) {
  Tensor<double>& t = ps.at(name);
  const double keep = t[idx];
  t[idx] = keep + h;
  const double up = loss_value(x, ps, cfg, io, rng);
  t[idx] = keep - h;
  const double dn = loss_value(x, ps, cfg, io, rng);
  t[idx] = keep;
  return (up - dn) / (2 * h);
}

ParamStore<double> widen(const ParamStore<float>& ps) {
  ParamStore<double> out;
  for (const auto& [name, t] : ps.values) {
    T64 d(t.shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<double>(t[i]);
    out.values.emplace(name, std::move(d));
  }
  return out;
}

// ============================ cached artifacts ============================

struct Cache {
  std::string dir;
  std::string c6_train() const { return dir + "/c6_train.mobd"; }
  std::string c6_eval() const { return dir + "/c6_eval.mobd"; }
  std::string c8_train() const { return dir + "/c8_train.mobd"; }
  std::string c8_ref() const { return dir + "/c8_ref.mobd"; }
  std::string run_dir() const { return dir + "/c6_run"; }
  std::string ckpt(int step) const {
    return run_dir() + "/ckpt_" + std::to_string(step) + ".iodc";
  }
};

constexpr TetrisParams kMiniScene{20, 2};

void ensure_datasets(const Cache& c) {
  fs::create_directories(c.dir);
  if (!fs::exists(c.c6_train())) {
    std::printf("[cache] generating training dataset (8192 records)\n");
    std::fflush(stdout);
    save_dataset(c.c6_train(), generate_tetris(8192, 101, kMiniScene));
  }
  if (!fs::exists(c.c6_eval())) {
    std::printf("[cache] generating held-out evaluation dataset (320 records)\n");
    std::fflush(stdout);
    save_dataset(c.c6_eval(), generate_tetris(320, 202, kMiniScene));
  }
  if (!fs::exists(c.c8_train()))
    save_dataset(c.c8_train(), generate_tetris(512, 303, kMiniScene));
}

// Trains (or resumes) the 20k-update desk-scale run whose checkpoints back
// criteria 6, 7, and 10.
void ensure_trained(const Cache& c) {
  ensure_datasets(c);
  if (fs::exists(c.ckpt(20000)) && fs::exists(c.ckpt(1000))) return;
  std::printf(
      "[cache] training the desk-scale model: 20000 updates, checkpoints "
      "every 1000 (this takes hours; progress in %s/metrics.csv)\n",
      c.run_dir().c_str());
  std::fflush(stdout);
  fs::create_directories(c.run_dir());
  LoopSettings s;
  s.model = tetris_mini_model();
  s.train.K = 3;
  s.train.T = 5;
  s.train_dataset = c.c6_train();
  s.eval_dataset = c.c6_eval();
  s.out_dir = c.run_dir();
  s.steps = 20000;
  s.batch = 16;
  s.seed = 7;
  s.eval_every = 1000;
  s.eval_records = 64;
  s.checkpoint_every = 1000;
  s.resume = fs::exists(c.run_dir() + "/ckpt_latest.iodc");
  train_loop(s);
}

// =============== criterion 1: gradients match finite differences =========

// Builders exercising every differentiable op outside the model path; the
// full-model checks below cover the rest (convs, broadcast decoder, mixture,
// refinement trunk, LSTM) in situ.
struct NamedBuild {
  std::string name;
  BuildFn<double> fn;
};

std::vector<NamedBuild> op_medley() {
  std::vector<NamedBuild> out;
  // pointwise chain; ranges keep arguments away from elu/sqrt/log kinks
  out.push_back({"pointwise", [](G64& g, const ParamStore<double>& ps,
                                 ParamBinding<double>& pb) {
                   V64 a = pb(g, ps, "a");  // [2,3,4] in [0.25, 1]
                   V64 b = pb(g, ps, "b");  // [2,3,4] in [-1, -0.25]
                   V64 t = mul(elu(adds(a, 0.3)), sigmoid(b));
                   t = add(t, tanh(mul(a, b)));
                   t = add(t, exp(muls(b, 0.3)));
                   t = add(t, log(adds(a, 0.5)));
                   t = add(t, sqrt(adds(a, 0.5)));
                   t = add(t, softplus(neg(b)));
                   t = sub(t, div(a, adds(b, -1.0)));
                   return sum_all(t);
                 }});
  out.push_back({"linear-algebra", [](G64& g, const ParamStore<double>& ps,
                                      ParamBinding<double>& pb) {
                   V64 a = pb(g, ps, "m1");  // [5,7]
                   V64 w = pb(g, ps, "m2");  // [7,4]
                   V64 bias = pb(g, ps, "v1");  // [4]
                   V64 h = tanh(add(matmul(a, w), broadcast_to(reshape(bias, {1, 4}), {5, 4})));
                   h = layer_norm(h, 1);
                   V64 r = reshape(h, {2, 10});
                   V64 s = slice(r, 1, 2, 5);
                   return add(sum_all(s),
                              add(mean_all(h), sum_all(reduce_mean(h, {0}, true))));
                 }});
  out.push_back({"conv", [](G64& g, const ParamStore<double>& ps,
                            ParamBinding<double>& pb) {
                   V64 x = pb(g, ps, "cx");   // [2,6,6]
                   V64 w1 = pb(g, ps, "cw1");  // [3,2,3,3]
                   V64 w2 = pb(g, ps, "cw2");  // [4,3,3,3]
                   V64 h1 = elu(conv2d(x, w1, 1, Pad::kSame));
                   V64 h2 = elu(conv2d(h1, w2, 2, Pad::kSame));
                   V64 h3 = conv2d(h1, w2, 1, Pad::kValid);
                   return add(sum_all(h2), sum_all(h3));
                 }});
  out.push_back({"normalization", [](G64& g, const ParamStore<double>& ps,
                                     ParamBinding<double>& pb) {
                   V64 a = pb(g, ps, "a");  // [2,3,4]
                   V64 sm = softmax(a, 1);
                   V64 lse = logsumexp(a, 2);
                   V64 cat = concat(
                       0, std::vector<V64>{slice(a, 0, 0, 1), slice(a, 0, 1, 1)});
                   V64 z = pb(g, ps, "z");  // [2,3]
                   V64 sb = spatial_broadcast(z, 4, 5);  // [2,5,4,5]
                   V64 gp = gaussian_logpdf(slice(sb, 1, 0, 3),
                                            broadcast_to(reshape(z, {2, 3, 1, 1}),
                                                         {2, 3, 4, 5}),
                                            0.7);
                   return add(add(sum_all(mul(sm, sm)), sum_all(lse)),
                              add(sum_all(cat), add(sum_all(sb), sum_all(gp))));
                 }});
  out.push_back({"lstm", [](G64& g, const ParamStore<double>& ps,
                            ParamBinding<double>& pb) {
                   V64 x = pb(g, ps, "lx");    // [2,6]
                   V64 h = pb(g, ps, "lh");    // [2,5]
                   V64 cc = pb(g, ps, "lc");   // [2,5]
                   V64 wx = pb(g, ps, "lwx");  // [6,20]
                   V64 wh = pb(g, ps, "lwh");  // [5,20]
                   V64 b = pb(g, ps, "lb");    // [20]
                   LstmState<double> st = lstm_cell(x, h, cc, wx, wh, b);
                   return add(sum_all(st.h), sum_all(mul(st.c, st.c)));
                 }});
  return out;
}

ParamStore<double> medley_params() {
  ParamStore<double> ps;
  Rng rng(17);
  auto mk = [&](const std::string& name, Shape sh, double lo, double hi) {
    T64 t(sh);
    rng.fill_uniform(t, lo, hi);
    ps.values.emplace(name, std::move(t));
  };
  mk("a", {2, 3, 4}, 0.25, 1.0);
  mk("b", {2, 3, 4}, -1.0, -0.25);
  mk("m1", {5, 7}, -1.0, 1.0);
  mk("m2", {7, 4}, -0.7, 0.7);
  mk("v1", {4}, -0.5, 0.5);
  mk("cx", {2, 6, 6}, -1.0, 1.0);
  mk("cw1", {3, 2, 3, 3}, -0.5, 0.5);
  mk("cw2", {4, 3, 3, 3}, -0.5, 0.5);
  mk("z", {2, 3}, -0.8, 0.8);
  mk("lx", {2, 6}, -1.0, 1.0);
  mk("lh", {2, 5}, -0.8, 0.8);
  mk("lc", {2, 5}, -0.8, 0.8);
  mk("lwx", {6, 20}, -0.4, 0.4);
  mk("lwh", {5, 20}, -0.4, 0.4);
  mk("lb", {20}, -0.3, 0.3);
  return ps;
}

// Analytic gradients of the unrolled loss against central differences. At
// T=1 the objective is differentiated exactly; at T>1 the training gradient
// is defined with the gradient- and likelihood-valued refinement inputs held
// constant, so the finite difference replays them (criterion 4 shows the
// unfrozen objective genuinely differs).
double model_fd_worst(const ModelConfig& cfg, int T, Rng seed_rng) {
  ParamStore<double> ps;
  init_model_params(ps, cfg, seed_rng.child("init-params"));
  const T64 x = random_image(cfg, seed_rng.child("image"));
  InferenceOptions<double> io;
  io.K = 2;
  io.T = T;
  io.final_refine = false;
  Rng rng(1234);

  GradMap<double> an = analytic_grads(x, ps, cfg, io, rng);
  InferenceOptions<double> io_fd = io;
  std::vector<RecordedAux<double>> recorded;
  if (T > 1) {
    InferenceOptions<double> io_rec = io;
    io_rec.aux_record = &recorded;
    (void)loss_value(x, ps, cfg, io_rec, rng);
    io_fd.aux_override = &recorded;
  }

  Rng pick(4321);
  double worst = 0;
  for (const auto& [name, gt] : an) {
    for (int s = 0; s < 3; ++s) {
      const std::int64_t idx = static_cast<std::int64_t>(
          pick.below(static_cast<std::uint64_t>(gt.numel())));
      const double fd = fd_grad(x, ps, cfg, io_fd, rng, name, idx, 1e-5);
      worst = std::max(worst, rel_err(gt[idx], fd));
    }
  }
  return worst;
}

Outcome criterion1() {
  const double bound = 1e-4;
  double worst = 0;
  std::string worst_site = "model";
  ParamStore<double> mp = medley_params();
  for (const NamedBuild& nb : op_medley()) {
    GradCheckReport rep = grad_check<double>(nb.fn, mp, 6, 1e-5, Rng(55));
    if (rep.max_rel > worst) {
      worst = rep.max_rel;
      worst_site = nb.name + ":" + rep.worst;
    }
  }
  const double full1 = model_fd_worst(toy_config(), 1, Rng(61));
  const double full2 = model_fd_worst(toy_config(), 2, Rng(62));
  ModelConfig lstm_cfg = toy_config();
  lstm_cfg.ref_lstm = 8;
  const double full3 = model_fd_worst(lstm_cfg, 2, Rng(63));
  for (auto [v, site] : {std::pair<double, const char*>{full1, "model T=1"},
                         {full2, "model T=2"},
                         {full3, "model T=2 lstm"}})
    if (v > worst) {
      worst = v;
      worst_site = site;
    }
  if (worst < bound)
    return {true, "per-op and full-model gradients match finite differences "
                  "(worst rel err " + fmt(worst) + " at " + worst_site + ")"};
  return {false, "worst rel err " + fmt(worst) + " at " + worst_site +
                 " exceeds " + fmt(bound)};
}

// =============== criterion 2: mixture-model invariants ===================

Outcome criterion2() {
  Rng rng(202);
  double worst_sum = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 2 + static_cast<int>(rng.below(4));
    const int C = rng.below(2) == 0 ? 1 : 3;
    const int H = 4 + static_cast<int>(rng.below(5));
    const int W = 4 + static_cast<int>(rng.below(5));
    T64 logits({K, 1, H, W}), means({K, C, H, W}), x({C, H, W});
    rng.fill_uniform(logits, -4.0, 4.0);
    rng.fill_uniform(means, -0.5, 1.5);
    rng.fill_uniform(x, 0.0, 1.0);

    const auto total_ll = [&](const T64& lg, const T64& mn) {
      G64 g;
      V64 masks = normalize_masks(g.constant(lg));
      const T64& m = masks.val();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(H) * W; ++p) {
        double s = 0;
        for (int k = 0; k < K; ++k) s += m.data[k * H * W + p];
        worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
      }
      T64 x4 = x;
      x4.shape = {1, C, H, W};
      V64 ll = slot_pixel_loglik(g.constant(x4), g.constant(mn), 0.1);
      return sum_all(log_mixture(log(masks), ll)).val()[0];
    };

    const double base = total_ll(logits, means);

    // random slot permutation, applied to logits and means together
    std::vector<int> perm(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) perm[static_cast<size_t>(k)] = k;
    for (int k = K - 1; k > 0; --k)
      std::swap(perm[static_cast<size_t>(k)],
                perm[static_cast<size_t>(rng.below(static_cast<std::uint64_t>(k + 1)))]);
    T64 plogits(logits.shape), pmeans(means.shape);
    const std::int64_t lhw = static_cast<std::int64_t>(H) * W;
    for (int k = 0; k < K; ++k) {
      std::copy_n(logits.ptr() + perm[static_cast<size_t>(k)] * lhw, lhw,
                  plogits.ptr() + k * lhw);
      std::copy_n(means.ptr() + perm[static_cast<size_t>(k)] * C * lhw, C * lhw,
                  pmeans.ptr() + k * C * lhw);
    }
    const double permuted = total_ll(plogits, pmeans);
    if (permuted != base)
      return {false, "log-likelihood changed under slot permutation on trial " +
                     std::to_string(trial) + " (" + fmt(base) + " vs " +
                     fmt(permuted) + ")"};
  }
  if (worst_sum <= 1e-6)
    return {true, "mask sums within " + fmt(worst_sum) +
                  " of 1; log-likelihood bit-invariant under slot permutation "
                  "on 100 instances"};
  return {false, "per-pixel mask sums deviate from 1 by " + fmt(worst_sum)};
}

// =============== criterion 3: clustering-metric oracle ====================

void all_partitions(int n, std::vector<std::vector<int>>& out) {
  std::vector<int> rgs(static_cast<size_t>(n), 0);
  const std::function<void(int, int)> rec = [&](int i, int maxv) {
    if (i == n) {
      out.push_back(rgs);
      return;
    }
    for (int v = 0; v <= maxv + 1; ++v) {
      rgs[static_cast<size_t>(i)] = v;
      rec(i + 1, std::max(maxv, v));
    }
  };
  rec(0, -1);
}

double oracle_ari(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size();
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      n11 += sa && sb;
      n10 += sa && !sb;
      n01 += !sa && sb;
      n00 += !sa && !sb;
    }
  const double denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
  if (denom == 0) return 1.0;
  return 2.0 * (n11 * n00 - n10 * n01) / denom;
}

Outcome criterion3() {
  double worst = 0;
  long pairs = 0;
  for (int n = 2; n <= 6; ++n) {
    std::vector<std::vector<int>> parts;
    all_partitions(n, parts);
    for (const auto& a : parts)
      for (const auto& b : parts) {
        worst = std::max(worst,
                         std::fabs(adjusted_rand_index(a, b) - oracle_ari(a, b)));
        ++pairs;
      }
  }
  if (worst > 1e-12)
    return {false, "pair-counting oracle disagrees by " + fmt(worst) + " over " +
                   std::to_string(pairs) + " partition pairs"};

  // identities: self-agreement and label-permutation invariance
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> lab(200);
    for (int& v : lab) v = static_cast<int>(rng.below(5));
    if (adjusted_rand_index(lab, lab) != 1.0)
      return {false, "self-agreement is not exactly 1"};
    std::vector<int> relab(lab.size());
    const int shift = 1 + static_cast<int>(rng.below(4));
    for (size_t i = 0; i < lab.size(); ++i) relab[i] = (lab[i] + shift) % 5 + 17;
    if (adjusted_rand_index(lab, relab) != 1.0)
      return {false, "label permutation changed the index"};
  }

  // chance behavior on 10^4-point random labelings
  double worst_chance = 0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> a(10000), b(10000);
    for (int& v : a) v = static_cast<int>(rng.below(5));
    for (int& v : b) v = static_cast<int>(rng.below(5));
    worst_chance = std::max(worst_chance, std::fabs(adjusted_rand_index(a, b)));
  }
  if (worst_chance >= 0.05)
    return {false, "random labelings score " + fmt(worst_chance) +
                   ", expected |value| < 0.05"};
  return {true, "matches the exhaustive pair-counting oracle on " +
                std::to_string(pairs) + " partition pairs (max diff " +
                fmt(worst) + "); identities hold; chance level " +
                fmt(worst_chance)};
}

// =============== criterion 4: stop-gradient policy ========================

Outcome criterion4() {
  const ModelConfig cfg = toy_config();
  ParamStore<double> ps;
  init_model_params(ps, cfg, Rng(91));
  const T64 x = random_image(cfg, Rng(92));
  InferenceOptions<double> io;
  io.K = 2;
  io.T = 2;
  io.final_refine = false;
  Rng rng(93);

  std::vector<RecordedAux<double>> recorded;
  InferenceOptions<double> io_rec = io;
  io_rec.aux_record = &recorded;
  (void)loss_value(x, ps, cfg, io_rec, rng);
  GradMap<double> an = analytic_grads(x, ps, cfg, io, rng);
  InferenceOptions<double> io_frozen = io;
  io_frozen.aux_override = &recorded;

  // coarse step: the true objective's extra double-derivative terms must
  // stand far above finite-difference noise
  const double h = 1e-4;
  Rng pick(94);
  double worst_frozen = 0, worst_true = 0;
  for (const std::string name :
       {"dec.conv0.w", "dec.head.w", "lambda0.mean", "lambda0.raw_scale"}) {
    const T64& gt = an.at(name);
    for (int s = 0; s < 6; ++s) {
      const std::int64_t idx = static_cast<std::int64_t>(
          pick.below(static_cast<std::uint64_t>(gt.numel())));
      worst_frozen = std::max(
          worst_frozen, rel_err(gt[idx], fd_grad(x, ps, cfg, io_frozen, rng,
                                                 name, idx, h)));
      worst_true = std::max(
          worst_true,
          rel_err(gt[idx], fd_grad(x, ps, cfg, io, rng, name, idx, h)));
    }
  }
  if (worst_frozen >= 1e-4)
    return {false, "gradient disagrees with the frozen-input objective (rel err " +
                   fmt(worst_frozen) + ")"};
  if (worst_true <= 10.0 * std::max(worst_frozen, 1e-6))
    return {false, "gradient does not distinguish the unfrozen objective "
                   "(frozen rel err " + fmt(worst_frozen) + ", unfrozen " +
                   fmt(worst_true) + ")"};
  return {true, "matches the frozen-input objective (rel err " +
                fmt(worst_frozen) + ") and differs from the unfrozen one (rel err " +
                fmt(worst_true) + ")"};
}

// =============== criterion 5: overfit smoke test ==========================

Outcome criterion5() {
  const ModelConfig cfg = tetris_mini_model();
  DatasetHeader h;
  h.kind = DatasetKind::kTetris;
  h.h = h.w = kMiniScene.canvas;
  h.c = 3;
  h.max_objects = kMiniScene.pieces;
  std::vector<Tensor<float>> batch;
  Rng data(55);
  for (int i = 0; i < 4; ++i)
    batch.push_back(record_to_image<float>(
        h, make_tetris_record(kMiniScene, data.child(static_cast<std::uint64_t>(i)))));

  ParamStore<float> ps;
  init_model_params(ps, cfg, Rng(7));
  AdamState<float> adam;
  TrainSettings ts;
  Rng noise(9);
  std::vector<double> losses;
  for (int step = 0; step < 500; ++step)
    losses.push_back(train_step(ps, adam, batch, cfg, ts,
                                noise.child(static_cast<std::uint64_t>(step)))
                         .total_loss);
  double ma10 = 0;
  for (int i = 0; i < 10; ++i) ma10 += losses[static_cast<size_t>(i)] / 10.0;
  const double final_loss = losses.back();
  if (final_loss <= 0.5 * ma10)
    return {true, "500 steps on a fixed 4-image batch cut the loss from " +
                  fmt(ma10) + " (step-10 moving average) to " + fmt(final_loss)};
  return {false, "loss only moved from " + fmt(ma10) + " to " + fmt(final_loss) +
                 ", less than the required 50% reduction"};
}

// =============== criterion 6: desk-scale segmentation =====================

double median_ari(const Cache& c, const std::string& ckpt_path, int K, int T) {
  ParamStore<float> psf;
  load_checkpoint(ckpt_path, psf);
  const ParamStore<double> ps = widen(psf);
  const ModelConfig cfg = tetris_mini_model();
  DatasetReader reader(c.c6_eval());
  InferenceOptions<double> opt;
  opt.K = K;
  opt.T = T;
  Rng root(606);
  std::vector<double> aris;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(reader.header().count); ++i)
    aris.push_back(evaluate_record(ps, cfg, reader.header(), reader.read(i), opt,
                                   root.child(static_cast<std::uint64_t>(i)))
                       .ari);
  return percentile(aris, 0.5);
}

Outcome criterion6(const Cache& c) {
  ensure_trained(c);
  const double ari_20k = median_ari(c, c.ckpt(20000), 3, 5);
  const double ari_1k = median_ari(c, c.ckpt(1000), 3, 5);
  const std::string measured = "median foreground ARI " + fmt(ari_20k) +
                               " at 20k updates vs " + fmt(ari_1k) + " at 1k";
  if (ari_20k >= 0.6 && ari_20k > ari_1k)
    return {true, measured + " on 320 held-out images"};
  return {false, measured + " (need >= 0.6 and improvement over 1k)"};
}

// =============== criterion 7: test-time generalization ====================

Outcome criterion7(const Cache& c) {
  ensure_trained(c);
  ParamStore<float> psf;
  load_checkpoint(c.ckpt(20000), psf);
  const ParamStore<double> ps = widen(psf);
  const ModelConfig cfg = tetris_mini_model();
  DatasetReader reader(c.c6_eval());

  // more slots and a longer horizon than training must run cleanly
  InferenceOptions<double> wide;
  wide.K = 5;   // trained with 3
  wide.T = 15;  // trained with 5
  Rng root(707);
  for (std::int64_t i = 0; i < 16; ++i) {
    const InferenceTrace<double> tr =
        run_inference(record_to_image<double>(reader.header(), reader.read(i)),
                      ps, cfg, wide, root.child(static_cast<std::uint64_t>(i)));
    for (const auto& it : tr.iters)
      if (!std::isfinite(it.loss))
        return {false, "non-finite loss at K=5, T=15 on record " +
                       std::to_string(i)};
  }

  // segmentation at twice the trained horizon must not be worse than at t=1
  const IterationCurves curves = mse_kl_curves(ps, cfg, reader, 0, 64, 3, 10, 909);
  const double at1 = curves.ari[0].median, at10 = curves.ari[9].median;
  if (at10 >= at1)
    return {true, "runs clean at K=5/T=15; median ARI " + fmt(at10) +
                  " at iteration 10 vs " + fmt(at1) + " at iteration 1"};
  return {false, "median ARI degrades with iterations: " + fmt(at1) +
                 " at t=1 vs " + fmt(at10) + " at t=10"};
}

// =============== criterion 8: determinism =================================

std::string read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail("cannot open '" + path + "'");
  std::string out;
  char buf[65536];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
  std::fclose(f);
  return out;
}

Outcome criterion8(const Cache& c) {
  ensure_datasets(c);

  // identical seed and config give byte-identical metrics across fresh runs
  const std::string dirs[2] = {c.dir + "/det_a", c.dir + "/det_b"};
  for (const std::string& d : dirs) {
    fs::remove_all(d);
    fs::create_directories(d);
    LoopSettings s;
    s.model = tetris_mini_model();
    s.train_dataset = c.c8_train();
    s.out_dir = d;
    s.steps = 100;
    s.batch = 16;
    s.seed = 12;
    s.eval_every = 50;
    s.eval_records = 32;
    s.checkpoint_every = 100;
    train_loop(s);
  }
  if (read_file(dirs[0] + "/metrics.csv") != read_file(dirs[1] + "/metrics.csv"))
    return {false, "two identically seeded 100-step runs wrote different "
                   "metrics.csv files"};
  if (read_file(dirs[0] + "/ckpt_100.iodc") != read_file(dirs[1] + "/ckpt_100.iodc"))
    return {false, "two identically seeded 100-step runs wrote different "
                   "checkpoints"};

  // dataset generation: bit-identical across regeneration, across record
  // order (records derive from per-index streams), and across process runs
  // via the cached reference copy from the first invocation
  const Dataset ds = generate_tetris(256, 44, kMiniScene);
  const Dataset again = generate_tetris(256, 44, kMiniScene);
  for (std::int64_t i = 0; i < 256; ++i) {
    Rng rec_rng = Rng(44).child(static_cast<std::uint64_t>(255 - i));
    const SceneRecord solo = make_tetris_record(kMiniScene, rec_rng);
    const SceneRecord& ref = ds.records[static_cast<size_t>(255 - i)];
    if (solo.image != ref.image || solo.masks != ref.masks ||
        !(solo.factors == ref.factors))
      return {false, "record " + std::to_string(255 - i) +
                     " differs when generated out of order"};
    const SceneRecord& two = again.records[static_cast<size_t>(i)];
    if (ds.records[static_cast<size_t>(i)].image != two.image)
      return {false, "regenerated dataset differs at record " + std::to_string(i)};
  }
  std::string process_note;
  const std::string fresh = c.dir + "/det_dataset.mobd";
  save_dataset(fresh, ds);
  if (!fs::exists(c.c8_ref())) {
    fs::copy_file(fresh, c.c8_ref());
    process_note = "; reference copy cached for cross-process comparison";
  } else {
    if (read_file(fresh) != read_file(c.c8_ref()))
      return {false, "dataset bytes differ from the cached copy written by an "
                     "earlier process"};
    process_note = "; matches the cached copy from an earlier process";
  }
  return {true, "100-step training and dataset generation are bit-identical "
                "across reruns and record orders" + process_note};
}

// =============== criterion 9: dataset integrity ===========================

Outcome criterion9(const Cache& c) {
  for (const DatasetKind kind :
       {DatasetKind::kTetris, DatasetKind::kMultiDSprites,
        DatasetKind::kMultiDSpritesBin, DatasetKind::kShapes}) {
    const Dataset ds = generate_dataset(kind, 1000, 909);
    const std::int64_t hw =
        static_cast<std::int64_t>(ds.header.h) * ds.header.w;
    for (std::int64_t r = 0; r < 1000; ++r) {
      const SceneRecord& rec = ds.records[static_cast<size_t>(r)];
      std::int64_t fg = 0;
      for (std::int64_t p = 0; p < hw; ++p) {
        int owners = rec.background[static_cast<size_t>(p)] != 0 ? 1 : 0;
        for (int o = 0; o < rec.object_count; ++o)
          owners += rec.masks[static_cast<size_t>(o * hw + p)] != 0 ? 1 : 0;
        if (owners != 1)
          return {false, std::string(dataset_kind_name(kind)) + " record " +
                         std::to_string(r) + " pixel " + std::to_string(p) +
                         " is covered " + std::to_string(owners) + " times"};
        for (int o = 0; o < rec.object_count; ++o)
          fg += rec.masks[static_cast<size_t>(o * hw + p)] != 0 ? 1 : 0;
      }
      if (kind == DatasetKind::kTetris && fg != 100 * rec.object_count)
        return {false, "tetris record " + std::to_string(r) + " has " +
                       std::to_string(fg) + " foreground pixels, expected " +
                       std::to_string(100 * rec.object_count)};
    }
    // bitwise save/load round-trip
    const std::string tmp = c.dir + "/integrity_" +
                            std::string(dataset_kind_name(kind)) + ".mobd";
    fs::create_directories(c.dir);
    save_dataset(tmp, ds);
    const Dataset back = load_dataset(tmp);
    for (std::int64_t r = 0; r < 1000; ++r) {
      const SceneRecord& x = ds.records[static_cast<size_t>(r)];
      const SceneRecord& y = back.records[static_cast<size_t>(r)];
      if (x.image != y.image || x.masks != y.masks ||
          x.background != y.background || x.object_count != y.object_count ||
          !(x.factors == y.factors))
        return {false, std::string(dataset_kind_name(kind)) +
                       " save/load round-trip altered record " +
                       std::to_string(r)};
    }
    fs::remove(tmp);
  }
  return {true, "1000 records per kind: masks partition every pixel exactly, "
                "tetris foreground is 100 px per piece, round-trips are bitwise"};
}

// =============== criterion 10: multi-stability harness ====================

std::string ascii_grid(const std::vector<int>& seg, int h, int w) {
  std::string out;
  for (int r = 0; r < h; ++r) {
    out += "    ";
    for (int col = 0; col < w; ++col) {
      const int v = seg[static_cast<size_t>(r * w + col)];
      out += static_cast<char>(v < 10 ? '0' + v : 'a' + (v - 10));
    }
    out += '\n';
  }
  return out;
}

Outcome criterion10(const Cache& c, const std::string& fixture_dir) {
  ensure_trained(c);
  const std::string fixture = fixture_dir + "/overlapping_pieces.mobd";
  if (!fs::exists(fixture))
    return {false, "fixture '" + fixture + "' is missing"};
  DatasetReader reader(fixture);
  const Tensor<double> x =
      record_to_image<double>(reader.header(), reader.read(0));

  ParamStore<float> psf;
  load_checkpoint(c.ckpt(20000), psf);
  const ParamStore<double> ps = widen(psf);
  const ModelConfig cfg = tetris_mini_model();

  InferenceOptions<double> opt;
  opt.K = 3;
  opt.T = 5;
  opt.sample_scale = 0.0;  // deterministic posterior mean
  const StabilityResult det = multi_stability_eval(ps, cfg, x, opt, 16, 1010);
  if (det.modes != 1)
    return {false, "deterministic inference produced " +
                   std::to_string(det.modes) + " modes over 16 seeds, expected 1"};

  opt.sample_scale = 1.0;
  const StabilityResult st = multi_stability_eval(ps, cfg, x, opt, 16, 1011);
  std::string seed_line = "  seed -> mode:";
  for (size_t i = 0; i < st.mode_of.size(); ++i)
    seed_line += " " + std::to_string(st.mode_of[static_cast<size_t>(i)]);
  std::printf("[stability] sampling run on the adjacent-pieces fixture:\n%s\n",
              seed_line.c_str());
  std::vector<int> first_seed_of;
  for (size_t i = 0; i < st.mode_of.size(); ++i)
    if (st.mode_of[i] == static_cast<int>(first_seed_of.size()))
      first_seed_of.push_back(static_cast<int>(i));
  for (size_t m = 0; m < first_seed_of.size() && m < 4; ++m) {
    std::printf("  mode %zu segmentation:\n%s", m,
                ascii_grid(st.segmentations[static_cast<size_t>(first_seed_of[m])],
                           cfg.img_h, cfg.img_w)
                    .c_str());
  }
  std::fflush(stdout);
  // mode multiplicity under sampling depends on the training outcome, so it
  // is reported rather than gated
  return {true, "deterministic inference collapses to 1 mode; sampling "
                "reported " + std::to_string(st.modes) + " mode(s) over 16 seeds"};
}

}  // namespace

int main(int argc, char** argv) {
  Cache cache{"acceptance_cache"};
  std::string fixture_dir = "tests/fixtures";
  bool prepare = false;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    const auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "missing value for %s\n", arg.c_str());
        std::exit(1);
      }
      return argv[++i];
    };
    if (arg == "--cache-dir") cache.dir = next();
    else if (arg == "--fixture-dir") fixture_dir = next();
    else if (arg == "--prepare") prepare = true;
    else if (arg == "--criteria") {
      const std::string list = next();
      for (const char* p = list.c_str(); *p;) {
        char* end = nullptr;
        selected.insert(static_cast<int>(std::strtol(p, &end, 10)));
        p = *end == ',' ? end + 1 : end;
      }
    } else {
      std::fprintf(stderr,
                   "unknown argument '%s'\nusage: acceptance [--cache-dir DIR] "
                   "[--fixture-dir DIR] [--prepare] [--criteria 1,2,...]\n",
                   arg.c_str());
      return 1;
    }
  }

  if (prepare) {
    try {
      ensure_trained(cache);
      std::printf("cache ready under %s\n", cache.dir.c_str());
      return 0;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "prepare failed: %s\n", e.what());
      return 1;
    }
  }

  struct Row {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Row> rows = {
      {1, "gradient correctness", [&] { return criterion1(); }},
      {2, "mixture-model invariants", [&] { return criterion2(); }},
      {3, "clustering-metric oracle", [&] { return criterion3(); }},
      {4, "stop-gradient policy", [&] { return criterion4(); }},
      {5, "overfit smoke test", [&] { return criterion5(); }},
      {6, "desk-scale segmentation", [&] { return criterion6(cache); }},
      {7, "test-time generalization", [&] { return criterion7(cache); }},
      {8, "determinism", [&] { return criterion8(cache); }},
      {9, "dataset integrity", [&] { return criterion9(cache); }},
      {10, "multi-stability harness",
       [&] { return criterion10(cache, fixture_dir); }},
  };

  int failures = 0, ran = 0;
  for (const Row& row : rows) {
    if (!selected.empty() && selected.find(row.id) == selected.end()) continue;
    ++ran;
    Outcome o;
    try {
      o = row.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d (%s): %s — %s\n", row.id, row.name,
                o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  std::printf("acceptance: %d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
