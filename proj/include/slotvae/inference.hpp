#pragma once
// Iterative amortized inference: posterior sampling, auxiliary-input
// assembly, the refinement network, and the unrolled loop.
//
// Each iteration samples z ~ q_lambda, decodes, evaluates the loss
// L = KL - log p(x|z), runs a targeted backward pass to obtain the
// gradient-valued auxiliary inputs, and applies an additive update
// lambda += f_phi(aux). The targeted backward walks only the paths from
// {lambda, means, masks} to the current loss, which both skips the weight
// gradients (not needed inside the loop) and stops at the current
// iteration's lambda, so earlier iterations are never re-differentiated
// here. The gradient and likelihood channels re-enter the network as
// gradient-stopped values; everything else stays live, and the one
// full backward during training differentiates through those live paths
// across all iterations.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "slotvae/decoder.hpp"
#include "slotvae/model.hpp"
#include "slotvae/ops.hpp"
#include "slotvae/params.hpp"
#include "slotvae/random.hpp"

namespace slotvae {

// One switch per refinement-network input; an off switch replaces the
// corresponding channels with zeros of the same shape, so the network's
// input layout never changes.
struct AblationFlags {
  bool image = true;
  bool means = true;
  bool mask = true;
  bool mask_logits = true;
  bool mask_posterior = true;
  bool grad_means = true;
  bool grad_mask = true;
  bool pixel_likelihood = true;
  bool loo_likelihood = true;
  bool coords = true;
  bool grad_lambda = true;

  bool all_on() const {
    return image && means && mask && mask_logits && mask_posterior &&
           grad_means && grad_mask && pixel_likelihood && loo_likelihood &&
           coords && grad_lambda;
  }
};

// The values the refinement network receives as constants at one iteration:
// the three gradient inputs plus the two gradient-stopped likelihood maps
// (pre-normalization). Freezing these across a finite-difference probe
// defines the surrogate objective whose FD gradient the analytic training
// gradient must match.
template <typename S>
struct RecordedAux {
  Tensor<S> grad_means;   // [K, C, H, W]
  Tensor<S> grad_mask;    // [K, 1, H, W]
  Tensor<S> grad_lambda;  // [K, 2M], mean gradients then raw-scale gradients
  Tensor<S> pixel_ll;     // [1, 1, H, W]
  Tensor<S> loo_ll;       // [K, 1, H, W]
};

template <typename S>
struct IterRecord {
  double kl = 0, nll = 0, loss = 0;
  // graph node ids (valid for the trace's graph)
  int lambda_mean_node = -1, lambda_raw_node = -1;
  int z_node = -1, means_node = -1, mask_logits_node = -1, masks_node = -1;
  int loss_node = -1;
  int aux_image_node = -1, aux_vector_node = -1;  // -1 when refine skipped
  // tensor copies, filled when InferenceOptions::record_tensors is set
  Tensor<S> lambda_mean, lambda_raw, z, means, masks;
};

template <typename S>
struct InferenceTrace {
  // unique_ptr keeps node ids in the records stable if the trace moves
  std::unique_ptr<Graph<S>> graph;
  ParamBinding<S> binding;
  std::vector<IterRecord<S>> iters;  // length T

  // posterior after the last refinement
  Tensor<S> final_lambda_mean, final_lambda_raw;  // [K, M]
  // final decode of that posterior: mean decode drives the metrics, the
  // sampled decode is kept alongside it
  Tensor<S> final_means, final_masks, final_recon;
  Tensor<S> final_sample_means, final_sample_masks;
};

template <typename S>
struct InferenceOptions {
  int K = 3, T = 5;
  double sigma = 0.1;
  // scales the reparameterization noise; 0 makes inference deterministic
  // (z = posterior mean), used by the multi-stability control
  double sample_scale = 1.0;
  // when false, the T-th refinement and the final decode are skipped; the
  // skipped work is downstream of every per-iteration loss, so the training
  // gradient is unchanged
  bool final_refine = true;
  bool record_tensors = false;
  AblationFlags ablation;
  // capture the per-iteration constant inputs (for the surrogate probe) ...
  std::vector<RecordedAux<S>>* aux_record = nullptr;
  // ... or replay previously captured ones instead of computing them
  const std::vector<RecordedAux<S>>* aux_override = nullptr;
};

namespace detail {

// zero tensor as a graph constant
template <typename S>
Var<S> zeros_const(Graph<S>& g, Shape shape) {
  return g.constant(Tensor<S>(std::move(shape)));
}

// log of the renormalized leave-one-out mixtures, [K, 1, H, W]:
// row k = lse_{j != k}(log m_j + ll_j) - log sum_{j != k} m_j.
// K = 1 has no remaining components; the channel is the zero constant.
template <typename S>
Var<S> leave_one_out(Graph<S>& g, Var<S> joint, Var<S> masks) {
  const int K = joint.shape()[0];
  const Shape one = {1, joint.shape()[1], joint.shape()[2], joint.shape()[3]};
  if (K == 1) return zeros_const(g, one);
  auto drop_row = [&](Var<S> a, int k) {
    if (k == 0) return slice(a, 0, 1, K - 1);
    if (k == K - 1) return slice(a, 0, 0, K - 1);
    return concat<S>(0, {slice(a, 0, 0, k), slice(a, 0, k + 1, K - 1 - k)});
  };
  std::vector<Var<S>> rows;
  rows.reserve(K);
  for (int k = 0; k < K; ++k) {
    Var<S> lse = logsumexp(drop_row(joint, k), 0);
    Var<S> norm = log(reduce_sum(drop_row(masks, k), {0}, /*keepdims=*/true));
    rows.push_back(sub(lse, norm));
  }
  return concat(0, rows);
}

// gradient-channel treatment: re-enter as a constant, layer-normalized
// per slot over everything past the slot axis
template <typename S>
Var<S> ln_const(Graph<S>& g, Tensor<S> v) {
  return layer_norm(g.constant(std::move(v)), 1);
}

}  // namespace detail

// Runs T refinement iterations on one image x [C, H, W]. The returned trace
// owns the graph; training calls backward on a weighted sum of the recorded
// per-iteration losses.
template <typename S>
InferenceTrace<S> run_inference(const Tensor<S>& x, const ParamStore<S>& ps,
                                const ModelConfig& cfg,
                                const InferenceOptions<S>& opt, Rng rng) {
  const int K = opt.K, T = opt.T, M = cfg.latent;
  const int C = cfg.img_c, H = cfg.img_h, W = cfg.img_w;
  if (K < 1 || T < 1) fail("run_inference: requires K >= 1 and T >= 1");
  if (x.shape != Shape{C, H, W})
    fail("run_inference: image shape " + shape_str(x.shape) +
         " does not match configured " + shape_str({C, H, W}));
  if (opt.aux_record && opt.aux_override)
    fail("run_inference: aux_record and aux_override are mutually exclusive");
  const int refines = opt.final_refine ? T : T - 1;
  if (opt.aux_override &&
      static_cast<int>(opt.aux_override->size()) < refines)
    fail("run_inference: aux_override holds " +
         std::to_string(opt.aux_override->size()) + " iterations, need " +
         std::to_string(refines));
  const S sig = static_cast<S>(opt.sigma);
  const S noise = static_cast<S>(opt.sample_scale);

  InferenceTrace<S> trace;
  trace.graph = std::make_unique<Graph<S>>();
  Graph<S>& g = *trace.graph;
  ParamBinding<S>& bind = trace.binding;

  Tensor<S> ximg = x;
  ximg.shape = {1, C, H, W};
  Var<S> x1 = g.constant(std::move(ximg));
  Var<S> xK = broadcast_to(x1, {K, C, H, W});
  Tensor<S> cg = coord_grid<S>(H, W);
  cg.shape = {1, 2, H, W};
  Var<S> coordsK = broadcast_to(g.constant(std::move(cg)), {K, 2, H, W});

  // shared trainable initial posterior, replicated across slots
  Var<S> lm = broadcast_to(reshape(bind(g, ps, "lambda0.mean"), {1, M}), {K, M});
  Var<S> lr =
      broadcast_to(reshape(bind(g, ps, "lambda0.raw_scale"), {1, M}), {K, M});
  LstmState<S> state;
  if (cfg.ref_lstm > 0) {
    state.h = detail::zeros_const(g, {K, cfg.ref_lstm});
    state.c = detail::zeros_const(g, {K, cfg.ref_lstm});
  }

  Rng sample_rng = rng.child("sample");
  trace.iters.reserve(T);
  for (int t = 0; t < T; ++t) {
    IterRecord<S> rec;
    rec.lambda_mean_node = lm.id;
    rec.lambda_raw_node = lr.id;

    Var<S> sq = adds(softplus(lr), S(1e-6));
    Var<S> z = lm;
    if (noise != S(0)) {
      Tensor<S> eps({K, M});
      sample_rng.child(static_cast<std::uint64_t>(t)).fill_normal(eps);
      z = add(lm, muls(mul(sq, g.constant(std::move(eps))), noise));
    }
    rec.z_node = z.id;

    DecodeResult<S> dec = decode_slots(g, z, ps, bind, cfg);
    Var<S> masks = normalize_masks(dec.mask_logits);
    Var<S> ll = slot_pixel_loglik(x1, dec.means, sig);  // [K,1,H,W]
    Var<S> joint = add(log(masks), ll);
    Var<S> logmix = logsumexp(joint, 0);  // [1,1,H,W]
    Var<S> nll = neg(sum_all(logmix));
    Var<S> kl = kl_to_prior(lm, sq);
    Var<S> loss = add(kl, nll);
    rec.means_node = dec.means.id;
    rec.mask_logits_node = dec.mask_logits.id;
    rec.masks_node = masks.id;
    rec.loss_node = loss.id;
    rec.kl = static_cast<double>(kl.val()[0]);
    rec.nll = static_cast<double>(nll.val()[0]);
    rec.loss = static_cast<double>(loss.val()[0]);
    if (!std::isfinite(rec.loss))
      fail("run_inference: non-finite loss at iteration " + std::to_string(t + 1) +
           " (kl=" + std::to_string(rec.kl) + ", nll=" + std::to_string(rec.nll) + ")");
    if (opt.record_tensors) {
      rec.lambda_mean = lm.val();
      rec.lambda_raw = lr.val();
      rec.z = z.val();
      rec.means = dec.means.val();
      rec.masks = masks.val();
    }

    const bool do_refine = (t + 1 < T) || opt.final_refine;
    if (do_refine) {
      const AblationFlags& ab = opt.ablation;

      // auxiliary gradients of the current iteration's loss, plus the two
      // likelihood maps that re-enter as constants
      Tensor<S> g_means, g_mask, g_lambda;
      Tensor<S> pix_raw, loo_raw;
      if (opt.aux_override) {
        const RecordedAux<S>& ra = (*opt.aux_override)[t];
        g_means = ra.grad_means;
        g_mask = ra.grad_mask;
        g_lambda = ra.grad_lambda;
        pix_raw = ra.pixel_ll;
        loo_raw = ra.loo_ll;
      } else {
        g.backward(loss.id, {lm.id, lr.id, dec.means.id, masks.id});
        g_means = g.grad(dec.means.id);
        g_mask = g.grad(masks.id);
        g_lambda = Tensor<S>({K, 2 * M});
        const Tensor<S>& gm = g.grad(lm.id);
        const Tensor<S>& gr = g.grad(lr.id);
        for (int k = 0; k < K; ++k)
          for (int m = 0; m < M; ++m) {
            g_lambda[k * 2 * M + m] = gm[k * M + m];
            g_lambda[k * 2 * M + M + m] = gr[k * M + m];
          }
        pix_raw = logmix.val();
        loo_raw = detail::leave_one_out(g, joint, masks).val();
        if (opt.aux_record)
          opt.aux_record->push_back({g_means, g_mask, g_lambda, pix_raw, loo_raw});
      }

      // image-like inputs, fixed channel order; gradient and likelihood
      // channels enter as constants (the latter via stop_gradient in the
      // live path's place), everything else stays differentiable
      std::vector<Var<S>> chans;
      chans.reserve(10);
      chans.push_back(ab.image ? xK : detail::zeros_const(g, {K, C, H, W}));
      chans.push_back(ab.means ? dec.means : detail::zeros_const(g, {K, C, H, W}));
      chans.push_back(ab.mask ? masks : detail::zeros_const(g, {K, 1, H, W}));
      chans.push_back(ab.mask_logits ? dec.mask_logits
                                     : detail::zeros_const(g, {K, 1, H, W}));
      chans.push_back(ab.mask_posterior ? softmax(ll, 0)
                                        : detail::zeros_const(g, {K, 1, H, W}));
      chans.push_back(ab.grad_means ? detail::ln_const(g, std::move(g_means))
                                    : detail::zeros_const(g, {K, C, H, W}));
      chans.push_back(ab.grad_mask ? detail::ln_const(g, std::move(g_mask))
                                   : detail::zeros_const(g, {K, 1, H, W}));
      chans.push_back(ab.pixel_likelihood
                          ? broadcast_to(detail::ln_const(g, std::move(pix_raw)),
                                         {K, 1, H, W})
                          : detail::zeros_const(g, {K, 1, H, W}));
      chans.push_back(ab.loo_likelihood ? detail::ln_const(g, std::move(loo_raw))
                                        : detail::zeros_const(g, {K, 1, H, W}));
      chans.push_back(ab.coords ? coordsK : detail::zeros_const(g, {K, 2, H, W}));
      Var<S> image_like = concat(1, chans);
      rec.aux_image_node = image_like.id;

      Var<S> lamvec = concat<S>(1, {lm, lr});  // [K, 2M], live
      Var<S> glam = ab.grad_lambda ? detail::ln_const(g, std::move(g_lambda))
                                   : detail::zeros_const(g, {K, 2 * M});
      Var<S> vector_like = concat<S>(1, {lamvec, glam});  // [K, 4M]
      rec.aux_vector_node = vector_like.id;

      // refinement network: conv trunk -> pool -> MLP -> (LSTM) -> head
      Var<S> cur = image_like;
      for (int i = 0; i < cfg.ref_layers; ++i) {
        const std::string name = "ref.conv" + std::to_string(i);
        Var<S> w = bind(g, ps, name + ".w");
        Var<S> b = bind(g, ps, name + ".b");
        cur = elu(add(conv2d(cur, w, cfg.ref_stride, Pad::kSame),
                      detail::conv_bias(b)));
      }
      Var<S> pooled = reduce_mean(cur, {2, 3});  // [K, ref_width]
      Var<S> feat = elu(add(matmul(pooled, bind(g, ps, "ref.mlp.w")),
                            bind(g, ps, "ref.mlp.b")));
      Var<S> head_in = concat<S>(1, {feat, vector_like});
      if (cfg.ref_lstm > 0) {
        state = lstm_cell(head_in, state.h, state.c, bind(g, ps, "ref.lstm.wx"),
                          bind(g, ps, "ref.lstm.wh"), bind(g, ps, "ref.lstm.b"));
        head_in = state.h;
      }
      Var<S> delta = add(matmul(head_in, bind(g, ps, "ref.head.w")),
                         bind(g, ps, "ref.head.b"));  // [K, 2M]
      lm = add(lm, slice(delta, 1, 0, M));
      lr = add(lr, slice(delta, 1, M, M));
    }
    trace.iters.push_back(std::move(rec));
  }

  trace.final_lambda_mean = lm.val();
  trace.final_lambda_raw = lr.val();
  if (opt.final_refine) {
    DecodeResult<S> dec = decode_slots(g, lm, ps, bind, cfg);
    Var<S> masks = normalize_masks(dec.mask_logits);
    trace.final_means = dec.means.val();
    trace.final_masks = masks.val();
    trace.final_recon = combine_slots(trace.final_means, trace.final_masks);
    if (noise != S(0)) {
      Tensor<S> eps({K, M});
      rng.child("final-sample").fill_normal(eps);
      Var<S> sq = adds(softplus(lr), S(1e-6));
      Var<S> zf = add(lm, muls(mul(sq, g.constant(std::move(eps))), noise));
      DecodeResult<S> decs = decode_slots(g, zf, ps, bind, cfg);
      trace.final_sample_means = decs.means.val();
      trace.final_sample_masks = normalize_masks(decs.mask_logits).val();
    } else {
      trace.final_sample_means = trace.final_means;
      trace.final_sample_masks = trace.final_masks;
    }
  } else {
    const IterRecord<S>& last = trace.iters.back();
    trace.final_means = g.value(last.means_node);
    trace.final_masks = g.value(last.masks_node);
    trace.final_recon = combine_slots(trace.final_means, trace.final_masks);
    trace.final_sample_means = trace.final_means;
    trace.final_sample_masks = trace.final_masks;
  }
  return trace;
}

}  // namespace slotvae
