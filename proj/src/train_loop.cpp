#include "slotvae/train_loop.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <numeric>

#include "slotvae/datasets.hpp"
#include "slotvae/evaluation.hpp"

namespace slotvae {

namespace {

std::vector<std::int64_t> epoch_order(std::int64_t pool, Rng rng) {
  std::vector<std::int64_t> idx(static_cast<size_t>(pool));
  std::iota(idx.begin(), idx.end(), std::int64_t{0});
  for (std::int64_t i = pool - 1; i > 0; --i) {
    const std::int64_t j =
        static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

void check_dims(const DatasetHeader& h, const ModelConfig& m, const std::string& path) {
  if (h.c != m.img_c || h.h != m.img_h || h.w != m.img_w)
    fail("train_loop: dataset '" + path + "' is " + std::to_string(h.c) + "x" +
         std::to_string(h.h) + "x" + std::to_string(h.w) + " but the model expects " +
         std::to_string(m.img_c) + "x" + std::to_string(m.img_h) + "x" +
         std::to_string(m.img_w));
}

}  // namespace

LoopResult train_loop(const LoopSettings& s) {
  if (s.batch < 1) fail("train_loop: batch must be >= 1");
  if (s.steps < 0) fail("train_loop: negative step target");
  if (s.train_dataset.empty()) fail("train_loop: no training dataset given");
  std::filesystem::create_directories(s.out_dir);

  DatasetReader train_data(s.train_dataset);
  check_dims(train_data.header(), s.model, s.train_dataset);
  const std::int64_t count = static_cast<std::int64_t>(train_data.header().count);

  // evaluation source: a separate dataset, or a held-out tail of the
  // training file that the shuffle pool then excludes
  std::unique_ptr<DatasetReader> eval_data;
  std::int64_t eval_first = 0, eval_n = 0;
  std::int64_t pool = count;
  if (s.eval_every > 0) {
    if (!s.eval_dataset.empty()) {
      eval_data = std::make_unique<DatasetReader>(s.eval_dataset);
      check_dims(eval_data->header(), s.model, s.eval_dataset);
      eval_n = std::min<std::int64_t>(
          s.eval_records, static_cast<std::int64_t>(eval_data->header().count));
      if (eval_n < 1) fail("train_loop: eval dataset '" + s.eval_dataset + "' is empty");
    } else {
      eval_n = std::min<std::int64_t>(s.eval_records, count - s.batch);
      if (eval_n < 1)
        fail("train_loop: dataset too small to hold out an eval slice");
      pool = count - eval_n;
      eval_first = pool;
    }
  }
  if (pool < s.batch)
    fail("train_loop: " + std::to_string(pool) + " training records cannot fill a batch of " +
         std::to_string(s.batch));
  const std::int64_t batches_per_epoch = pool / s.batch;

  ParamStore<float> params;
  AdamState<float> adam;
  std::int64_t start_step = 0;
  const std::string latest = s.out_dir + "/ckpt_latest.iodc";
  LoopResult result;
  if (s.resume) {
    load_checkpoint(latest, params, &adam);
    start_step = adam.step;
    result.latest_checkpoint = latest;
  } else {
    init_model_params(params, s.model, Rng(s.seed));
  }

  const std::string metrics_path = s.out_dir + "/metrics.csv";
  std::FILE* metrics = std::fopen(metrics_path.c_str(), s.resume ? "ab" : "wb");
  if (!metrics) fail("train_loop: cannot open metrics file '" + metrics_path + "'");
  if (!s.resume) std::fprintf(metrics, "step,total_loss,mse,kl,ari,seconds\n");

  Rng root(s.seed);
  std::vector<Tensor<float>> batch_imgs(static_cast<size_t>(s.batch));
  std::vector<std::int64_t> order;
  std::int64_t cur_epoch = -1;

  for (std::int64_t step = start_step; step < s.steps; ++step) {
    const std::int64_t epoch = step / batches_per_epoch;
    if (epoch != cur_epoch) {
      order = epoch_order(pool, root.child("shuffle").child(
                                    static_cast<std::uint64_t>(epoch)));
      cur_epoch = epoch;
    }
    const std::int64_t off = (step % batches_per_epoch) * s.batch;
    for (int b = 0; b < s.batch; ++b)
      batch_imgs[static_cast<size_t>(b)] = record_to_image<float>(
          train_data.header(), train_data.read(order[static_cast<size_t>(off + b)]));

    const auto t0 = std::chrono::steady_clock::now();
    TrainRecord rec;
    try {
      rec = train_step(params, adam, batch_imgs, s.model, s.train,
                       root.child("noise").child(static_cast<std::uint64_t>(step)));
    } catch (const std::exception& e) {
      std::fclose(metrics);
      fail(std::string(e.what()) + " (training aborted at step " +
           std::to_string(step + 1) + "; last checkpoint retained" +
           (result.latest_checkpoint.empty() ? std::string(", none written yet")
                                             : " at '" + result.latest_checkpoint + "'") +
           ")");
    }
    const double seconds =
        s.timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                       .count()
                 : 0.0;

    const std::int64_t row = step + 1;
    char ari_field[32] = "";
    if (s.eval_every > 0 && row % s.eval_every == 0) {
      std::vector<double> aris;
      InferenceOptions<float> opt;
      opt.K = s.train.K;
      opt.T = s.train.T;
      opt.sigma = s.train.sigma;
      opt.ablation = s.train.ablation;
      Rng erng = Rng(s.seed).child("eval").child(static_cast<std::uint64_t>(step));
      DatasetReader& src = eval_data ? *eval_data : train_data;
      for (std::int64_t i = 0; i < eval_n; ++i)
        aris.push_back(evaluate_record(params, s.model, src.header(),
                                       src.read(eval_first + i), opt,
                                       erng.child(static_cast<std::uint64_t>(i)))
                           .ari);
      result.final_eval_ari = percentile(aris, 0.5);
      std::snprintf(ari_field, sizeof(ari_field), "%.6f", result.final_eval_ari);
    }
    std::fprintf(metrics, "%" PRId64 ",%.6f,%.6f,%.6f,%s,%.6f\n", row,
                 rec.total_loss, rec.mse, rec.kl, ari_field, seconds);
    std::fflush(metrics);

    if (s.checkpoint_every > 0 && row % s.checkpoint_every == 0) {
      const std::string numbered =
          s.out_dir + "/ckpt_" + std::to_string(row) + ".iodc";
      save_checkpoint(numbered, params);          // weights only
      save_checkpoint(latest, params, &adam);     // resumable
      result.latest_checkpoint = numbered;
    }
    result.steps_done = row;
    result.final_total_loss = rec.total_loss;
  }

  std::fclose(metrics);
  save_checkpoint(latest, params, &adam);
  if (result.latest_checkpoint.empty()) result.latest_checkpoint = latest;
  return result;
}

}  // namespace slotvae
