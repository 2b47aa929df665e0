// slotvae — command-line driver for multi-object scene decomposition.
//
// Subcommands:
//   gen-data    write a procedural dataset (.mobd) plus a checksum summary
//   train       run (or resume) unrolled variational training
//   eval        score a checkpoint on a dataset slice (ARI / MSE / KL)
//   visualize   render decomposition, iteration, traversal, stability figures
//   ablate      retrain with individual refinement inputs disabled and compare
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slotvae/config.hpp"
#include "slotvae/datasets.hpp"
#include "slotvae/evaluation.hpp"
#include "slotvae/image.hpp"
#include "slotvae/inference.hpp"
#include "slotvae/model.hpp"
#include "slotvae/params.hpp"
#include "slotvae/random.hpp"
#include "slotvae/train_loop.hpp"
#include "slotvae/training.hpp"
#include "slotvae/visualize.hpp"

namespace fs = std::filesystem;
using namespace slotvae;

namespace {

using Scalar = double;  // the CLI runs everything in double precision

// shortest decimal form that parses back to exactly `v`
std::string fmt_real(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ensure_dir(const std::string& path) {
  if (path.empty()) return;
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) fail("cannot create directory '" + path + "': " + ec.message());
}

void ensure_parent_dir(const std::string& file_path) {
  const fs::path parent = fs::path(file_path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

// FNV-1a over the raw bytes of a file; stable fingerprint for summaries
std::uint64_t fnv1a_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail("cannot open '" + path + "' for checksumming");
  std::uint64_t h = 14695981039346656037ull;
  unsigned char buf[65536];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0)
    for (size_t i = 0; i < n; ++i) h = (h ^ buf[i]) * 1099511628211ull;
  const bool bad = std::ferror(f) != 0;
  std::fclose(f);
  if (bad) fail("read error while checksumming '" + path + "'");
  return h;
}

DatasetKind kind_from_name(const std::string& name) {
  if (name == "tetris") return DatasetKind::kTetris;
  if (name == "multi-dsprites") return DatasetKind::kMultiDSprites;
  if (name == "multi-dsprites-bin") return DatasetKind::kMultiDSpritesBin;
  if (name == "shapes") return DatasetKind::kShapes;
  fail("unknown dataset kind '" + name +
       "' (expected tetris, multi-dsprites, multi-dsprites-bin, or shapes)");
}

ModelConfig preset_model(const std::string& name) {
  if (name == "tetris-mini") return tetris_mini_model();
  if (name == "tetris-paper") return tetris_paper_model();
  fail("unknown preset '" + name +
       "' (expected 'tetris-mini' or 'tetris-paper')");
}

int preset_default_slots(const std::string& name) {
  return name == "tetris-paper" ? 4 : 3;
}

constexpr const char* kChannelNames[] = {
    "image",          "means",          "mask",          "mask_logits",
    "mask_posterior", "grad_means",     "grad_mask",     "pixel_likelihood",
    "loo_likelihood", "coords",         "grad_lambda"};

void disable_channel(AblationFlags& a, const std::string& n) {
  if (n == "none") return;  // explicit no-op, keeps every input enabled
  if (n == "image") a.image = false;
  else if (n == "means") a.means = false;
  else if (n == "mask") a.mask = false;
  else if (n == "mask_logits") a.mask_logits = false;
  else if (n == "mask_posterior") a.mask_posterior = false;
  else if (n == "grad_means") a.grad_means = false;
  else if (n == "grad_mask") a.grad_mask = false;
  else if (n == "pixel_likelihood") a.pixel_likelihood = false;
  else if (n == "loo_likelihood") a.loo_likelihood = false;
  else if (n == "coords") a.coords = false;
  else if (n == "grad_lambda") a.grad_lambda = false;
  else {
    std::string known = "none";
    for (const char* c : kChannelNames) known += std::string(", ") + c;
    fail("unknown refinement input '" + n + "' (expected one of: " + known + ")");
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    std::string item = s.substr(start, comma - start);
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    start = comma + 1;
  }
  return out;
}

AblationFlags ablation_from_csv(const std::string& csv) {
  AblationFlags a;
  for (const std::string& n : split_csv(csv)) disable_channel(a, n);
  return a;
}

// normalized form of an ablation list for the resolved-config snapshot
std::string ablation_to_string(const AblationFlags& a) {
  const std::pair<const char*, bool> flags[] = {
      {"image", a.image},
      {"means", a.means},
      {"mask", a.mask},
      {"mask_logits", a.mask_logits},
      {"mask_posterior", a.mask_posterior},
      {"grad_means", a.grad_means},
      {"grad_mask", a.grad_mask},
      {"pixel_likelihood", a.pixel_likelihood},
      {"loo_likelihood", a.loo_likelihood},
      {"coords", a.coords},
      {"grad_lambda", a.grad_lambda}};
  std::string out;
  for (const auto& [name, on] : flags)
    if (!on) out += (out.empty() ? "" : ",") + std::string(name);
  return out.empty() ? "none" : out;
}

// Verifies a loaded checkpoint holds exactly the parameters the preset
// defines, with matching shapes, so shape errors surface here by name
// instead of deep inside inference.
void check_params_match(const ParamStore<Scalar>& loaded, const ModelConfig& cfg,
                        const std::string& ckpt, const std::string& preset) {
  ParamStore<Scalar> ref;
  init_model_params(ref, cfg, Rng(0));
  for (const auto& [name, t] : ref.values) {
    auto it = loaded.values.find(name);
    if (it == loaded.values.end())
      fail("checkpoint '" + ckpt + "' is missing parameter '" + name +
           "' required by preset '" + preset + "'");
    if (it->second.shape != t.shape)
      fail("checkpoint '" + ckpt + "' parameter '" + name + "' has shape " +
           shape_str(it->second.shape) + " but preset '" + preset +
           "' expects " + shape_str(t.shape));
  }
  for (const auto& [name, t] : loaded.values)
    if (ref.values.find(name) == ref.values.end())
      fail("checkpoint '" + ckpt + "' has unexpected parameter '" + name +
           "' (not defined by preset '" + preset + "')");
}

void check_dataset_matches(const DatasetHeader& h, const ModelConfig& cfg,
                           const std::string& path, const std::string& preset) {
  if (h.c != cfg.img_c || h.h != cfg.img_h || h.w != cfg.img_w)
    fail("dataset '" + path + "' holds " + std::to_string(h.h) + "x" +
         std::to_string(h.w) + "x" + std::to_string(h.c) +
         " images but preset '" + preset + "' expects " +
         std::to_string(cfg.img_h) + "x" + std::to_string(cfg.img_w) + "x" +
         std::to_string(cfg.img_c));
}

void write_text_file(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail("cannot open '" + path + "' for writing");
  const bool bad = std::fwrite(text.data(), 1, text.size(), f) != text.size();
  std::fclose(f);
  if (bad) fail("write failed for '" + path + "'");
}

// ============================ gen-data ====================================

struct GenDataArgs {
  std::string kind;
  std::int64_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
  int canvas = 35;
  int pieces = 3;
};

int cmd_gen_data(const GenDataArgs& a) {
  const DatasetKind kind = kind_from_name(a.kind);
  TetrisParams tetris;
  tetris.canvas = a.canvas;
  tetris.pieces = a.pieces;

  ensure_parent_dir(a.out);
  RunConfig resolved;
  resolved.set("kind", a.kind);
  resolved.set("n", std::to_string(a.n));
  resolved.set("seed", std::to_string(a.seed));
  resolved.set("out", a.out);
  if (kind == DatasetKind::kTetris) {
    resolved.set("canvas", std::to_string(tetris.canvas));
    resolved.set("pieces", std::to_string(tetris.pieces));
  }
  resolved.write_snapshot(a.out + ".config");

  const Dataset ds = generate_dataset(kind, a.n, a.seed, tetris);
  save_dataset(a.out, ds);
  const std::uint64_t checksum = fnv1a_file(a.out);

  char sum[64];
  std::snprintf(sum, sizeof sum, "0x%016" PRIx64, checksum);
  std::string summary;
  summary += "dataset: " + a.out + "\n";
  summary += "kind: " + std::string(dataset_kind_name(ds.header.kind)) + "\n";
  summary += "records: " + std::to_string(ds.header.count) + "\n";
  summary += "image: " + std::to_string(ds.header.h) + "x" +
             std::to_string(ds.header.w) + "x" + std::to_string(ds.header.c) +
             "\n";
  summary += "max_objects: " + std::to_string(ds.header.max_objects) + "\n";
  summary += "seed: " + std::to_string(ds.header.seed) + "\n";
  summary += "fnv1a: " + std::string(sum) + "\n";
  write_text_file(a.out + ".summary", summary);
  std::fputs(summary.c_str(), stdout);
  return 0;
}

// ============================== train =====================================

// Flag values land in RunConfig as strings so file values, flag overrides,
// and the resolved snapshot all flow through one precedence rule.
struct TrainFlags {
  std::string config_path;
  std::string preset, dataset, eval_dataset, out, ablate;
  std::int64_t steps = 0, batch = 0, eval_every = 0, eval_records = 0,
               checkpoint_every = 0;
  std::uint64_t seed = 0;
  double lr = 0, sigma = 0, clip = 0;
  int K = 0, T = 0;
  bool timing = false, resume = false;
};

struct ResolvedTrain {
  LoopSettings loop;
  std::string preset;
};

const std::vector<std::string> kTrainKeys = {
    "preset", "dataset", "eval_dataset", "out", "steps", "batch", "seed",
    "lr", "clip", "K", "T", "sigma", "eval_every", "eval_records",
    "checkpoint_every", "timing", "resume", "ablate"};

ResolvedTrain resolve_train(const RunConfig& rc, bool for_ablate) {
  std::vector<std::string> known = kTrainKeys;
  if (for_ablate) {
    // per-run ablation flags come from --flags; cadence keys do not apply
    for (const char* drop : {"ablate", "resume", "timing", "eval_every",
                             "checkpoint_every"})
      known.erase(std::find(known.begin(), known.end(), drop));
  }
  rc.check_known(known);

  ResolvedTrain r;
  r.preset = rc.get_string_or("preset", "tetris-mini");
  LoopSettings& s = r.loop;
  s.model = preset_model(r.preset);
  s.model.sigma = rc.get_double_or("sigma", s.model.sigma);
  s.train.K = static_cast<int>(rc.get_int_or("K", preset_default_slots(r.preset)));
  s.train.T = static_cast<int>(rc.get_int_or("T", 5));
  s.train.sigma = s.model.sigma;
  s.train.lr = rc.get_double_or("lr", 3e-4);
  s.train.clip = rc.get_double_or("clip", 5.0);
  if (!for_ablate)
    s.train.ablation = ablation_from_csv(rc.get_string_or("ablate", "none"));
  s.train_dataset = rc.get_string("dataset");
  s.eval_dataset = rc.get_string_or("eval_dataset", "");
  s.out_dir = rc.get_string("out");
  s.steps = rc.get_int_or("steps", for_ablate ? 300 : 1000);
  s.batch = static_cast<int>(rc.get_int_or("batch", 16));
  s.seed = rc.get_u64_or("seed", 0);
  s.eval_records = rc.get_int_or("eval_records", for_ablate ? 64 : 320);
  if (!for_ablate) {
    s.eval_every = rc.get_int_or("eval_every", 0);
    s.checkpoint_every = rc.get_int_or("checkpoint_every", 1000);
    s.timing = rc.get_bool_or("timing", false);
    s.resume = rc.get_bool_or("resume", false);
  } else {
    s.eval_every = 0;
    s.checkpoint_every = s.steps;
    s.timing = false;
    s.resume = false;
  }
  return r;
}

// Loadable back via --config: re-running from the snapshot reproduces the run.
RunConfig snapshot_of(const ResolvedTrain& r, bool for_ablate) {
  const LoopSettings& s = r.loop;
  RunConfig out;
  out.set("preset", r.preset);
  out.set("dataset", s.train_dataset);
  if (!s.eval_dataset.empty()) out.set("eval_dataset", s.eval_dataset);
  out.set("out", s.out_dir);
  out.set("steps", std::to_string(s.steps));
  out.set("batch", std::to_string(s.batch));
  out.set("seed", std::to_string(s.seed));
  out.set("lr", fmt_real(s.train.lr));
  out.set("clip", fmt_real(s.train.clip));
  out.set("K", std::to_string(s.train.K));
  out.set("T", std::to_string(s.train.T));
  out.set("sigma", fmt_real(s.model.sigma));
  out.set("eval_records", std::to_string(s.eval_records));
  if (!for_ablate) {
    out.set("ablate", ablation_to_string(s.train.ablation));
    out.set("eval_every", std::to_string(s.eval_every));
    out.set("checkpoint_every", std::to_string(s.checkpoint_every));
    out.set("timing", s.timing ? "true" : "false");
    out.set("resume", s.resume ? "true" : "false");
  }
  return out;
}

RunConfig merge_config(const TrainFlags& f,
                       const std::map<std::string, CLI::Option*>& opts) {
  RunConfig rc = f.config_path.empty() ? RunConfig()
                                       : RunConfig::from_file(f.config_path);
  const auto passed = [&](const char* flag) {
    auto it = opts.find(flag);
    return it != opts.end() && it->second->count() > 0;
  };
  if (passed("--preset")) rc.set("preset", f.preset);
  if (passed("--dataset")) rc.set("dataset", f.dataset);
  if (passed("--eval-dataset")) rc.set("eval_dataset", f.eval_dataset);
  if (passed("--out")) rc.set("out", f.out);
  if (passed("--steps")) rc.set("steps", std::to_string(f.steps));
  if (passed("--batch")) rc.set("batch", std::to_string(f.batch));
  if (passed("--seed")) rc.set("seed", std::to_string(f.seed));
  if (passed("--lr")) rc.set("lr", fmt_real(f.lr));
  if (passed("--clip")) rc.set("clip", fmt_real(f.clip));
  if (passed("--K")) rc.set("K", std::to_string(f.K));
  if (passed("--T")) rc.set("T", std::to_string(f.T));
  if (passed("--sigma")) rc.set("sigma", fmt_real(f.sigma));
  if (passed("--eval-every")) rc.set("eval_every", std::to_string(f.eval_every));
  if (passed("--eval-records"))
    rc.set("eval_records", std::to_string(f.eval_records));
  if (passed("--checkpoint-every"))
    rc.set("checkpoint_every", std::to_string(f.checkpoint_every));
  if (passed("--timing")) rc.set("timing", "true");
  if (passed("--resume")) rc.set("resume", "true");
  if (passed("--ablate")) rc.set("ablate", f.ablate);
  return rc;
}

// registers the flags shared by `train` and `ablate`
std::map<std::string, CLI::Option*> add_train_flags(CLI::App* cmd, TrainFlags& f,
                                                    bool for_ablate) {
  std::map<std::string, CLI::Option*> opts;
  opts["--config"] =
      cmd->add_option("--config", f.config_path,
                      "key=value config file; flags override file values");
  opts["--preset"] = cmd->add_option(
      "--preset", f.preset, "model preset: tetris-mini or tetris-paper");
  opts["--dataset"] =
      cmd->add_option("--dataset", f.dataset, "training dataset (.mobd)");
  opts["--eval-dataset"] = cmd->add_option(
      "--eval-dataset", f.eval_dataset,
      "evaluation dataset; default holds out the tail of --dataset");
  opts["--out"] = cmd->add_option("--out", f.out, "output directory");
  opts["--steps"] = cmd->add_option("--steps", f.steps, "parameter updates");
  opts["--batch"] = cmd->add_option("--batch", f.batch, "minibatch size");
  opts["--seed"] = cmd->add_option("--seed", f.seed, "master seed");
  opts["--lr"] = cmd->add_option("--lr", f.lr, "Adam learning rate");
  opts["--clip"] = cmd->add_option("--clip", f.clip, "gradient-norm clip");
  opts["--K"] = cmd->add_option("--K", f.K, "number of slots");
  opts["--T"] = cmd->add_option("--T", f.T, "refinement iterations");
  opts["--sigma"] = cmd->add_option("--sigma", f.sigma, "mixture component scale");
  opts["--eval-records"] = cmd->add_option("--eval-records", f.eval_records,
                                           "records per evaluation");
  if (!for_ablate) {
    opts["--eval-every"] = cmd->add_option(
        "--eval-every", f.eval_every, "evaluate every N steps (0 = never)");
    opts["--checkpoint-every"] = cmd->add_option(
        "--checkpoint-every", f.checkpoint_every, "checkpoint every N steps");
    opts["--timing"] = cmd->add_flag("--timing", f.timing,
                                     "record wall-clock seconds in metrics.csv");
    opts["--resume"] =
        cmd->add_flag("--resume", f.resume, "resume from ckpt_latest.iodc");
    opts["--ablate"] = cmd->add_option(
        "--ablate", f.ablate,
        "comma list of refinement inputs to disable ('none' keeps all)");
  }
  return opts;
}

int cmd_train(const TrainFlags& f,
              const std::map<std::string, CLI::Option*>& opts) {
  const RunConfig rc = merge_config(f, opts);
  const ResolvedTrain r = resolve_train(rc, /*for_ablate=*/false);
  ensure_dir(r.loop.out_dir);
  snapshot_of(r, false).write_snapshot(r.loop.out_dir + "/config_resolved.txt");

  const LoopResult res = train_loop(r.loop);
  std::printf("trained %" PRId64 " steps; final loss %.6f\n", res.steps_done,
              res.final_total_loss);
  if (res.final_eval_ari >= -1.0)
    std::printf("last mid-run eval: median foreground ARI %.6f\n",
                res.final_eval_ari);
  std::printf("latest checkpoint: %s\n", res.latest_checkpoint.c_str());
  return 0;
}

// =============================== eval =====================================

struct EvalArgs {
  std::string checkpoint, dataset, out;
  std::string preset = "tetris-mini";
  std::int64_t n = 320, first = 0;
  int K = 0, T = 5;  // K 0 = preset default
  double sigma = -1.0, sample_scale = 1.0;
  std::uint64_t seed = 0;
  std::string ablate = "none";
  bool curves = false;
};

int cmd_eval(const EvalArgs& a) {
  ModelConfig model = preset_model(a.preset);
  if (a.sigma > 0) model.sigma = a.sigma;
  const int K = a.K > 0 ? a.K : preset_default_slots(a.preset);

  ParamStore<Scalar> params;
  load_checkpoint(a.checkpoint, params);
  check_params_match(params, model, a.checkpoint, a.preset);

  DatasetReader reader(a.dataset);
  const DatasetHeader& h = reader.header();
  check_dataset_matches(h, model, a.dataset, a.preset);
  if (a.first < 0 || a.first >= static_cast<std::int64_t>(h.count))
    fail("--first " + std::to_string(a.first) + " is outside dataset '" +
         a.dataset + "' with " + std::to_string(h.count) + " records");
  std::int64_t n = a.n;
  if (a.first + n > static_cast<std::int64_t>(h.count)) {
    n = static_cast<std::int64_t>(h.count) - a.first;
    std::fprintf(stderr,
                 "note: slice clipped to %" PRId64
                 " records (dataset holds %" PRIu64 ")\n",
                 n, h.count);
  }
  if (n < 1) fail("evaluation slice is empty");

  ensure_dir(a.out);
  RunConfig resolved;
  resolved.set("checkpoint", a.checkpoint);
  resolved.set("dataset", a.dataset);
  resolved.set("out", a.out);
  resolved.set("preset", a.preset);
  resolved.set("n", std::to_string(n));
  resolved.set("first", std::to_string(a.first));
  resolved.set("K", std::to_string(K));
  resolved.set("T", std::to_string(a.T));
  resolved.set("sigma", fmt_real(model.sigma));
  resolved.set("sample_scale", fmt_real(a.sample_scale));
  resolved.set("seed", std::to_string(a.seed));
  resolved.set("ablate", ablation_to_string(ablation_from_csv(a.ablate)));
  resolved.write_snapshot(a.out + "/config_resolved.txt");

  InferenceOptions<Scalar> opt;
  opt.K = K;
  opt.T = a.T;
  opt.sigma = model.sigma;
  opt.sample_scale = a.sample_scale;
  opt.ablation = ablation_from_csv(a.ablate);

  const std::string report_path = a.out + "/report.csv";
  std::FILE* report = std::fopen(report_path.c_str(), "wb");
  if (!report) fail("cannot open '" + report_path + "' for writing");
  std::fprintf(report, "record_id,ari,mse,kl\n");
  Rng root(a.seed);
  std::vector<double> aris, mses, kls;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t id = a.first + i;
    const SceneRecord rec = reader.read(id);
    const RecordEval e =
        evaluate_record(params, model, h, rec, opt,
                        root.child(static_cast<std::uint64_t>(id)));
    std::fprintf(report, "%" PRId64 ",%.6f,%.6f,%.6f\n", id, e.ari, e.mse, e.kl);
    aris.push_back(e.ari);
    mses.push_back(e.mse);
    kls.push_back(e.kl);
  }
  std::fclose(report);

  const CurvePoint qa = quartiles(aris), qm = quartiles(mses), qk = quartiles(kls);
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "records = %" PRId64
                "\n"
                "ari_median = %.6f\nari_q25 = %.6f\nari_q75 = %.6f\n"
                "mse_median = %.6f\nmse_q25 = %.6f\nmse_q75 = %.6f\n"
                "kl_median = %.6f\nkl_q25 = %.6f\nkl_q75 = %.6f\n",
                n, qa.median, qa.q25, qa.q75, qm.median, qm.q25, qm.q75,
                qk.median, qk.q25, qk.q75);
  write_text_file(a.out + "/summary.txt", buf);
  std::fputs(buf, stdout);

  if (a.curves) {
    const IterationCurves c =
        mse_kl_curves(params, model, reader, a.first, n, K, a.T, a.seed);
    const std::string curves_path = a.out + "/curves.csv";
    std::FILE* cf = std::fopen(curves_path.c_str(), "wb");
    if (!cf) fail("cannot open '" + curves_path + "' for writing");
    std::fprintf(cf,
                 "iteration,mse_q25,mse_median,mse_q75,kl_q25,kl_median,"
                 "kl_q75,ari_q25,ari_median,ari_q75\n");
    for (size_t t = 0; t < c.mse.size(); ++t)
      std::fprintf(cf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                   t + 1, c.mse[t].q25, c.mse[t].median, c.mse[t].q75,
                   c.kl[t].q25, c.kl[t].median, c.kl[t].q75, c.ari[t].q25,
                   c.ari[t].median, c.ari[t].q75);
    std::fclose(cf);
  }
  return 0;
}

// ============================ visualize ===================================

struct VisualizeArgs {
  std::string checkpoint, dataset, out;
  std::string preset = "tetris-mini";
  std::vector<std::int64_t> records{0};
  int K = 0, T = 5;
  double sigma = -1.0, sample_scale = 1.0;
  std::uint64_t seed = 0;
  int traverse_dims = 2, traverse_steps = 7;
  int stability_seeds = 8;
};

int cmd_visualize(const VisualizeArgs& a) {
  ModelConfig model = preset_model(a.preset);
  if (a.sigma > 0) model.sigma = a.sigma;
  const int K = a.K > 0 ? a.K : preset_default_slots(a.preset);

  ParamStore<Scalar> params;
  load_checkpoint(a.checkpoint, params);
  check_params_match(params, model, a.checkpoint, a.preset);

  DatasetReader reader(a.dataset);
  const DatasetHeader& h = reader.header();
  check_dataset_matches(h, model, a.dataset, a.preset);

  ensure_dir(a.out);
  RunConfig resolved;
  resolved.set("checkpoint", a.checkpoint);
  resolved.set("dataset", a.dataset);
  resolved.set("out", a.out);
  resolved.set("preset", a.preset);
  {
    std::string ids;
    for (std::int64_t r : a.records)
      ids += (ids.empty() ? "" : ",") + std::to_string(r);
    resolved.set("records", ids);
  }
  resolved.set("K", std::to_string(K));
  resolved.set("T", std::to_string(a.T));
  resolved.set("sigma", fmt_real(model.sigma));
  resolved.set("sample_scale", fmt_real(a.sample_scale));
  resolved.set("seed", std::to_string(a.seed));
  resolved.set("traverse_dims", std::to_string(a.traverse_dims));
  resolved.set("traverse_steps", std::to_string(a.traverse_steps));
  resolved.set("stability_seeds", std::to_string(a.stability_seeds));
  resolved.write_snapshot(a.out + "/config_resolved.txt");

  Rng root(a.seed);
  for (const std::int64_t id : a.records) {
    if (id < 0 || id >= static_cast<std::int64_t>(h.count))
      fail("record " + std::to_string(id) + " is outside dataset '" +
           a.dataset + "' with " + std::to_string(h.count) + " records");
    const SceneRecord rec = reader.read(id);
    const Tensor<Scalar> x = record_to_image<Scalar>(h, rec);

    InferenceOptions<Scalar> opt;
    opt.K = K;
    opt.T = a.T;
    opt.sigma = model.sigma;
    opt.sample_scale = a.sample_scale;
    opt.record_tensors = true;
    const InferenceTrace<Scalar> trace = run_inference(
        x, params, model, opt, root.child(static_cast<std::uint64_t>(id)));

    const std::string tag = std::to_string(id);
    write_ppm(decomposition_strip(x, trace), a.out + "/decomp_" + tag + ".ppm");
    write_ppm(iteration_rows(trace), a.out + "/iterations_" + tag + ".ppm");

    // traverse the highest-KL latent dimensions; within each, move the slot
    // that carries the most KL on that dimension
    const auto ranked =
        kl_per_dimension(trace.final_lambda_mean, trace.final_lambda_raw);
    const int dims = std::min<int>(a.traverse_dims, model.latent);
    for (int d = 0; d < dims; ++d) {
      const int dim = ranked[static_cast<size_t>(d)].first;
      int slot = 0;
      double best = -1.0;
      for (int k = 0; k < K; ++k) {
        const double mu = trace.final_lambda_mean.data[k * model.latent + dim];
        const double raw = trace.final_lambda_raw.data[k * model.latent + dim];
        const double sig = std::log1p(std::exp(raw)) + 1e-6;
        const double kl = 0.5 * (mu * mu + sig * sig - 1.0) - std::log(sig);
        if (kl > best) {
          best = kl;
          slot = k;
        }
      }
      const TraversalResult<Scalar> tr =
          latent_traversal(params, model, trace.final_lambda_mean, slot, dim,
                           Scalar(-2), Scalar(2), a.traverse_steps);
      write_ppm(traversal_strip(tr), a.out + "/traverse_" + tag + "_slot" +
                                         std::to_string(slot) + "_dim" +
                                         std::to_string(dim) + ".ppm");
    }

    if (a.stability_seeds > 0) {
      InferenceOptions<Scalar> sopt = opt;
      sopt.record_tensors = false;
      const StabilityResult st = multi_stability_eval(
          params, model, x, sopt, a.stability_seeds,
          root.child("stability").child(static_cast<std::uint64_t>(id)).seed());
      write_ppm(stability_grid(x, st), a.out + "/stability_" + tag + ".ppm");
      std::printf("record %" PRId64 ": %d distinct segmentation mode%s over %d seeds\n",
                  id, st.modes, st.modes == 1 ? "" : "s", a.stability_seeds);
    }
  }
  std::printf("wrote figures for %zu record%s to %s\n", a.records.size(),
              a.records.size() == 1 ? "" : "s", a.out.c_str());
  return 0;
}

// ============================== ablate ====================================

struct AblateArgs {
  std::string flags_csv;
};

int cmd_ablate(const TrainFlags& f,
               const std::map<std::string, CLI::Option*>& opts,
               const AblateArgs& a) {
  const RunConfig rc = merge_config(f, opts);
  const ResolvedTrain base = resolve_train(rc, /*for_ablate=*/true);
  const std::vector<std::string> flags = split_csv(a.flags_csv);
  if (flags.empty()) fail("--flags lists no refinement inputs");
  for (const std::string& n : flags) {
    AblationFlags probe;
    disable_channel(probe, n);  // validates the name before any training
  }

  ensure_dir(base.loop.out_dir);
  RunConfig resolved = snapshot_of(base, true);
  resolved.set("flags", a.flags_csv);
  resolved.write_snapshot(base.loop.out_dir + "/config_resolved.txt");

  // evaluation slice: eval dataset when given, otherwise the training tail
  // (mirrors the holdout rule used during training)
  const std::string eval_path = base.loop.eval_dataset.empty()
                                    ? base.loop.train_dataset
                                    : base.loop.eval_dataset;
  DatasetReader ereader(eval_path);
  const DatasetHeader& eh = ereader.header();
  check_dataset_matches(eh, base.loop.model, eval_path, base.preset);
  std::int64_t eval_n = base.loop.eval_records;
  std::int64_t eval_first = 0;
  if (base.loop.eval_dataset.empty()) {
    const std::int64_t holdout = static_cast<std::int64_t>(eh.count) -
                                 static_cast<std::int64_t>(base.loop.batch);
    eval_n = std::min(eval_n, holdout);
    eval_first = static_cast<std::int64_t>(eh.count) - eval_n;
  } else {
    eval_n = std::min(eval_n, static_cast<std::int64_t>(eh.count));
  }
  if (eval_n < 1) fail("ablation evaluation slice is empty");

  const std::string csv_path = base.loop.out_dir + "/ablation.csv";
  std::FILE* csv = std::fopen(csv_path.c_str(), "wb");
  if (!csv) fail("cannot open '" + csv_path + "' for writing");
  std::fprintf(csv, "run,flag,final_loss,ari,mse,kl\n");
  std::printf("run,flag,final_loss,ari,mse,kl\n");

  for (size_t run = 0; run < flags.size() + 1; ++run) {
    const std::string flag = run == 0 ? "baseline" : flags[run - 1];
    LoopSettings s = base.loop;
    s.out_dir = base.loop.out_dir + "/" +
                (run == 0 ? "baseline" : "ablate_" + flag);
    if (run > 0) disable_channel(s.train.ablation, flag);
    ensure_dir(s.out_dir);
    const LoopResult res = train_loop(s);

    ParamStore<Scalar> params;
    load_checkpoint(s.out_dir + "/ckpt_latest.iodc", params);
    InferenceOptions<Scalar> opt;
    opt.K = s.train.K;
    opt.T = s.train.T;
    opt.sigma = s.model.sigma;
    opt.ablation = s.train.ablation;  // evaluate exactly as trained
    Rng eroot = Rng(s.seed).child("ablate-eval");
    std::vector<double> aris, mses, kls;
    for (std::int64_t i = 0; i < eval_n; ++i) {
      const SceneRecord rec = ereader.read(eval_first + i);
      const RecordEval e =
          evaluate_record(params, s.model, eh, rec, opt,
                          eroot.child(static_cast<std::uint64_t>(i)));
      aris.push_back(e.ari);
      mses.push_back(e.mse);
      kls.push_back(e.kl);
    }
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%s,%.6f,%.6f,%.6f,%.6f\n", run,
                  flag.c_str(), res.final_total_loss, percentile(aris, 0.5),
                  percentile(mses, 0.5), percentile(kls, 0.5));
    std::fputs(line, csv);
    std::fflush(csv);
    std::fputs(line, stdout);
  }
  std::fclose(csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slotvae: unsupervised multi-object scene decomposition"};
  app.require_subcommand(1);

  GenDataArgs gd;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "generate a procedural dataset (.mobd)");
  gen->add_option("--kind", gd.kind,
                  "tetris | multi-dsprites | multi-dsprites-bin | shapes")
      ->required()
      ->check(CLI::IsMember(
          {"tetris", "multi-dsprites", "multi-dsprites-bin", "shapes"}));
  gen->add_option("--n", gd.n, "number of records")
      ->required()
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gd.seed, "generation seed");
  gen->add_option("--out", gd.out, "output path (.mobd)")->required();
  gen->add_option("--canvas", gd.canvas, "tetris canvas size in pixels");
  gen->add_option("--pieces", gd.pieces, "tetris pieces per scene");

  TrainFlags tf;
  CLI::App* train = app.add_subcommand("train", "train a model");
  const auto train_opts = add_train_flags(train, tf, /*for_ablate=*/false);

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
  eval->add_option("--checkpoint", ev.checkpoint, "checkpoint (.iodc)")
      ->required();
  eval->add_option("--dataset", ev.dataset, "dataset (.mobd)")->required();
  eval->add_option("--out", ev.out, "output directory")->required();
  eval->add_option("--preset", ev.preset, "model preset");
  eval->add_option("--n", ev.n, "records to evaluate");
  eval->add_option("--first", ev.first, "index of the first record");
  eval->add_option("--K", ev.K, "slots at test time (default: preset)");
  eval->add_option("--T", ev.T, "refinement iterations at test time");
  eval->add_option("--sigma", ev.sigma, "mixture component scale");
  eval->add_option("--sample-scale", ev.sample_scale,
                   "posterior sampling scale (0 = deterministic)");
  eval->add_option("--seed", ev.seed, "evaluation seed");
  eval->add_option("--ablate", ev.ablate,
                   "refinement inputs to disable during inference");
  eval->add_flag("--curves", ev.curves,
                 "also write per-iteration metric quartiles (curves.csv)");

  VisualizeArgs vz;
  CLI::App* viz = app.add_subcommand("visualize", "render figures from a checkpoint");
  viz->add_option("--checkpoint", vz.checkpoint, "checkpoint (.iodc)")
      ->required();
  viz->add_option("--dataset", vz.dataset, "dataset (.mobd)")->required();
  viz->add_option("--out", vz.out, "output directory")->required();
  viz->add_option("--preset", vz.preset, "model preset");
  viz->add_option("--records", vz.records, "record indices to render")
      ->delimiter(',');
  viz->add_option("--K", vz.K, "slots at test time (default: preset)");
  viz->add_option("--T", vz.T, "refinement iterations at test time");
  viz->add_option("--sigma", vz.sigma, "mixture component scale");
  viz->add_option("--sample-scale", vz.sample_scale,
                  "posterior sampling scale (0 = deterministic)");
  viz->add_option("--seed", vz.seed, "visualization seed");
  viz->add_option("--traverse-dims", vz.traverse_dims,
                  "number of top-KL latent dimensions to traverse");
  viz->add_option("--traverse-steps", vz.traverse_steps,
                  "settings per traversal strip");
  viz->add_option("--stability-seeds", vz.stability_seeds,
                  "inference restarts for the stability grid (0 = skip)");

  TrainFlags af;
  AblateArgs ab;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "compare training runs with refinement inputs disabled");
  const auto ablate_opts = add_train_flags(ablate, af, /*for_ablate=*/true);
  ablate->add_option("--flags", ab.flags_csv,
                     "comma list of refinement inputs, one run each "
                     "('none' trains an unablated copy)")
      ->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(gd);
    if (train->parsed()) return cmd_train(tf, train_opts);
    if (eval->parsed()) return cmd_eval(ev);
    if (viz->parsed()) return cmd_visualize(vz);
    if (ablate->parsed()) return cmd_ablate(af, ablate_opts, ab);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
