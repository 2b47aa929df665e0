#pragma once
// Unrolled end-to-end training: the iteration-weighted loss over a trace,
// and one optimizer step over a minibatch. Per-example graphs are built and
// differentiated independently; gradients are reduced in sorted parameter
// order, so a step is deterministic given (params, batch, rng).

#include <cmath>
#include <vector>

#include "slotvae/inference.hpp"
#include "slotvae/model.hpp"
#include "slotvae/params.hpp"

namespace slotvae {

// L_total = sum_t (t/T) L^(t), t = 1..T
template <typename S>
Var<S> total_loss(InferenceTrace<S>& trace) {
  Graph<S>& g = *trace.graph;
  const int T = static_cast<int>(trace.iters.size());
  if (T == 0) fail("total_loss: empty trace");
  Var<S> acc;
  for (int t = 0; t < T; ++t) {
    Var<S> term = muls(Var<S>{&g, trace.iters[t].loss_node},
                       static_cast<S>(t + 1) / static_cast<S>(T));
    acc = (t == 0) ? term : add(acc, term);
  }
  return acc;
}

struct TrainSettings {
  int K = 3, T = 5;
  double sigma = 0.1;
  double lr = 3e-4;
  double clip = 5.0;
  AblationFlags ablation;
};

struct TrainRecord {
  std::int64_t step = 0;
  double total_loss = 0;  // batch mean of the weighted objective
  double mse = 0;         // batch mean, final-iteration reconstruction
  double kl = 0;          // batch mean, final-iteration KL
  double grad_norm = 0;   // pre-clip global L2 norm
  double seconds = 0;     // filled by the caller
};

// One optimizer step on a minibatch of [C,H,W] images. The rng must be a
// step-specific stream; examples draw from child streams by batch index.
template <typename S>
TrainRecord train_step(ParamStore<S>& params, AdamState<S>& adam,
                       const std::vector<Tensor<S>>& batch,
                       const ModelConfig& cfg, const TrainSettings& ts,
                       Rng rng) {
  if (batch.empty()) fail("train_step: empty batch");
  const S inv_b = S(1) / static_cast<S>(batch.size());
  GradMap<S> accum;
  TrainRecord rec;
  for (size_t i = 0; i < batch.size(); ++i) {
    InferenceOptions<S> io;
    io.K = ts.K;
    io.T = ts.T;
    io.sigma = ts.sigma;
    io.ablation = ts.ablation;
    // the last refinement and final decode sit downstream of every
    // per-iteration loss, so training skips them
    io.final_refine = false;
    InferenceTrace<S> trace = run_inference(
        batch[i], params, cfg, io, rng.child(static_cast<std::uint64_t>(i)));
    Var<S> loss = total_loss(trace);
    trace.graph->backward(loss.id);
    trace.binding.accumulate_grads(*trace.graph, accum, inv_b);
    rec.total_loss += static_cast<double>(loss.val()[0]) / batch.size();
    rec.kl += trace.iters.back().kl / batch.size();
    rec.mse += reconstruction_mse(batch[i], trace.final_means,
                                  trace.final_masks) /
               batch.size();
  }
  if (!std::isfinite(rec.total_loss))
    fail("train_step: non-finite batch loss " + std::to_string(rec.total_loss));
  rec.grad_norm = clip_global_norm(accum, ts.clip);
  AdamConfig ac;
  ac.lr = ts.lr;
  adam_step(params, accum, adam, ac);
  return rec;
}

}  // namespace slotvae
