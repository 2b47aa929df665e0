#pragma once

// Full training runs over a dataset file: shuffled minibatches, per-step
// metrics CSV, periodic held-out evaluation, periodic checkpoints, and
// deterministic resume. Single-precision driver over the templated core.

#include <cstdint>
#include <string>

#include "slotvae/training.hpp"

namespace slotvae {

struct LoopSettings {
  ModelConfig model;
  TrainSettings train;

  std::string train_dataset;  // path to a .mobd file (required)
  std::string eval_dataset;   // empty: hold out the tail of train_dataset
  std::string out_dir = ".";  // receives metrics.csv and checkpoints

  std::int64_t steps = 1000;  // absolute target step count
  int batch = 16;
  std::uint64_t seed = 0;

  std::int64_t eval_every = 0;  // 0: never evaluate during training
  std::int64_t eval_records = 320;
  std::int64_t checkpoint_every = 1000;

  // when false, the CSV seconds column is written as 0.000000 so reruns of
  // the same seed produce byte-identical metrics files
  bool timing = false;
  bool resume = false;  // continue from <out_dir>/ckpt_latest.iodc
};

struct LoopResult {
  std::int64_t steps_done = 0;
  // training loss of the last update performed by this call (0 if none ran)
  double final_total_loss = 0.0;
  // median foreground ARI from the most recent mid-run evaluation; -2 when
  // no evaluation ran
  double final_eval_ari = -2.0;
  std::string latest_checkpoint;
};

// Runs (or resumes) training to `steps` updates. Writes one metrics row per
// step (header step,total_loss,mse,kl,ari,seconds; ari empty off-cadence),
// numbered weights-only checkpoints plus a resumable ckpt_latest.iodc on the
// checkpoint cadence, and always a final ckpt_latest.iodc. A non-finite loss
// aborts with the last checkpoint retained on disk.
LoopResult train_loop(const LoopSettings& settings);

}  // namespace slotvae
