// Black-box tests of the command-line tool. Each case launches the real
// binary in a scratch directory under the test's working directory and
// inspects exit codes, printed output, and the files left behind.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;

#ifndef SLOTVAE_BIN
#error "SLOTVAE_BIN must be defined as the path to the CLI binary"
#endif

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved

  bool contains(const std::string& needle) const {
    return out.find(needle) != std::string::npos;
  }
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string("\"") + SLOTVAE_BIN + "\" " + args + " 2>&1";
  RunResult r;
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::current_path() / "cli_scratch" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// key=value lines ('#' comments allowed), as written by run snapshots
std::map<std::string, std::string> parse_kv(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

int data_rows(const fs::path& csv) {
  std::istringstream in(slurp(csv));
  std::string line;
  int rows = -1;  // don't count the header
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  return rows;
}

// reads "P6\n<w> <h>\n255\n" and returns {w, h}
std::pair<int, int> ppm_size(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  CHECK(magic == "P6");
  CHECK(maxval == 255);
  return {w, h};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// a 20x20 two-piece dataset shared by the heavier cases
fs::path shared_data() {
  static fs::path mobd = [] {
    const fs::path d = fresh_dir("shared");
    const fs::path p = d / "tiny.mobd";
    RunResult r = run("gen-data --kind tetris --n 12 --seed 3 --canvas 20 "
                      "--pieces 2 --out " + q(p));
    REQUIRE(r.code == 0);
    return p;
  }();
  return mobd;
}

// a short training run shared by eval/visualize cases
fs::path shared_ckpt() {
  static fs::path ckpt = [] {
    const fs::path d = fresh_dir("shared_run");
    RunResult r = run("train --dataset " + q(shared_data()) + " --out " + q(d) +
                      " --steps 4 --batch 2 --T 2 --seed 11");
    REQUIRE(r.code == 0);
    return d / "ckpt_latest.iodc";
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("help text and usage errors") {
  CHECK(run("--help").code == 0);
  CHECK(run("--help").contains("gen-data"));
  CHECK(run("train --help").code == 0);

  CHECK(run("").code == 1);                       // subcommand required
  CHECK(run("frobnicate").code == 1);             // unknown subcommand
  CHECK(run("gen-data --kind tetris").code == 1); // missing required flags
  CHECK(run("gen-data --kind nope --n 1 --out x.mobd").code == 1);
  CHECK(run("train --no-such-flag").code == 1);
}

TEST_CASE("gen-data determinism, snapshot, and summary") {
  const fs::path d = fresh_dir("gen");
  const std::string common =
      "gen-data --kind tetris --n 6 --seed 9 --canvas 20 --pieces 2 --out ";

  RunResult a = run(common + q(d / "a.mobd"));
  CHECK(a.code == 0);
  CHECK(a.contains("fnv1a"));
  CHECK(fs::exists(d / "a.mobd"));
  CHECK(fs::exists(d / "a.mobd.config"));
  CHECK(fs::exists(d / "a.mobd.summary"));

  RunResult b = run(common + q(d / "b.mobd"));
  CHECK(b.code == 0);
  CHECK(slurp(d / "a.mobd") == slurp(d / "b.mobd"));  // bitwise identical

  auto kv = parse_kv(d / "a.mobd.config");
  CHECK(kv["kind"] == "tetris");
  CHECK(kv["n"] == "6");
  CHECK(kv["seed"] == "9");
  CHECK(kv["canvas"] == "20");
  CHECK(kv["pieces"] == "2");

  CHECK(slurp(d / "a.mobd.summary").find("records") != std::string::npos);

  // the other kinds generate without tetris-only flags
  CHECK(run("gen-data --kind shapes --n 2 --seed 1 --out " +
            q(d / "s.mobd")).code == 0);
  CHECK(run("gen-data --kind multi-dsprites-bin --n 2 --seed 1 --out " +
            q(d / "m.mobd")).code == 0);
}

TEST_CASE("train writes a resolved snapshot with flag-over-file precedence") {
  const fs::path d = fresh_dir("train");
  const fs::path cfg = d / "run.cfg";
  const fs::path out = d / "runA";
  {
    std::ofstream f(cfg);
    f << "dataset = " << shared_data().string() << "\n"
      << "out = " << out.string() << "\n"
      << "steps = 7   # flag below should beat this\n"
      << "batch = 2\n"
      << "T = 2\n";
  }

  RunResult r = run("train --config " + q(cfg) + " --steps 3 --seed 2");
  CHECK(r.code == 0);
  CHECK(r.contains("trained 3 steps"));

  auto kv = parse_kv(out / "config_resolved.txt");
  CHECK(kv["steps"] == "3");          // flag beat the file value
  CHECK(kv["T"] == "2");              // file value survived
  CHECK(kv["batch"] == "2");
  CHECK(kv["preset"] == "tetris-mini");
  CHECK(kv["K"] == "3");              // preset default slots
  CHECK(std::stod(kv["lr"]) == 0.0003);  // preset default learning rate
  CHECK(kv["seed"] == "2");

  CHECK(data_rows(out / "metrics.csv") == 3);
  CHECK(slurp(out / "metrics.csv").rfind("step,total_loss,mse,kl,ari,seconds",
                                         0) == 0);
  CHECK(fs::exists(out / "ckpt_latest.iodc"));

  // resuming continues the step count and appends to the metrics file
  RunResult r2 = run("train --config " + q(cfg) + " --steps 5 --seed 2 --resume");
  CHECK(r2.code == 0);
  CHECK(r2.contains("trained 5 steps"));
  CHECK(data_rows(out / "metrics.csv") == 5);

  // unknown keys in the config file are rejected
  {
    std::ofstream f(cfg, std::ios::app);
    f << "stepz = 4\n";
  }
  CHECK(run("train --config " + q(cfg)).code == 2);
}

TEST_CASE("train rejects a dataset that does not match the preset") {
  RunResult r = run("train --preset tetris-paper --dataset " +
                    q(shared_data()) + " --out " +
                    q(fresh_dir("mismatch")) + " --steps 1");
  CHECK(r.code == 2);
  CHECK(r.contains("dataset"));
}

TEST_CASE("eval writes report, summary, and honors slicing") {
  const fs::path out = fresh_dir("eval");
  const std::string base = "eval --checkpoint " + q(shared_ckpt()) +
                           " --dataset " + q(shared_data()) + " --T 2 --seed 5";

  RunResult r = run(base + " --n 3 --out " + q(out));
  CHECK(r.code == 0);
  CHECK(data_rows(out / "report.csv") == 3);
  CHECK(slurp(out / "report.csv").rfind("record_id,ari,mse,kl", 0) == 0);
  CHECK(slurp(out / "summary.txt").find("ari_median") != std::string::npos);

  // more slots at test time than at training time is allowed
  const fs::path out_k = fresh_dir("eval_k5");
  CHECK(run(base + " --n 2 --K 5 --out " + q(out_k)).code == 0);

  // a slice reaching past the end is clipped to what exists (12 records)
  const fs::path out_c = fresh_dir("eval_clip");
  RunResult rc = run(base + " --first 10 --n 5 --out " + q(out_c));
  CHECK(rc.code == 0);
  CHECK(data_rows(out_c / "report.csv") == 2);

  // per-iteration quartile curves are opt-in
  const fs::path out_q = fresh_dir("eval_curves");
  RunResult rq = run(base + " --n 2 --curves --out " + q(out_q));
  CHECK(rq.code == 0);
  CHECK(slurp(out_q / "curves.csv").rfind("iteration,", 0) == 0);

  // checkpoint trained with a different preset's shapes is rejected
  CHECK(run("eval --checkpoint " + q(shared_ckpt()) +
            " --preset tetris-paper --dataset " + q(shared_data()) +
            " --out " + q(fresh_dir("eval_bad")) + " --n 1").code == 2);
}

TEST_CASE("visualize renders decomposition, iteration, traversal, stability") {
  const fs::path out = fresh_dir("viz");
  RunResult r = run("visualize --checkpoint " + q(shared_ckpt()) +
                    " --dataset " + q(shared_data()) + " --out " + q(out) +
                    " --records 1,2 --T 2 --traverse-dims 1 "
                    "--traverse-steps 3 --stability-seeds 2 --seed 4");
  CHECK(r.code == 0);

  for (const char* id : {"1", "2"}) {
    // input | reconstruction | K slot tiles, 2-px separators, 20-px tiles
    auto [w, h] = ppm_size(out / (std::string("decomp_") + id + ".ppm"));
    CHECK(w == (3 + 3) * 20 + (3 + 2) * 2);
    CHECK(h == 20);
    CHECK(fs::exists(out / (std::string("iterations_") + id + ".ppm")));
    CHECK(fs::exists(out / (std::string("stability_") + id + ".ppm")));
  }
  // one traversal strip per requested dimension per record
  int traversals = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename().string().rfind("traverse_", 0) == 0) ++traversals;
  CHECK(traversals == 2);
  CHECK(r.contains("mode"));  // stability mode count is reported

  // records outside the dataset are an error
  CHECK(run("visualize --checkpoint " + q(shared_ckpt()) + " --dataset " +
            q(shared_data()) + " --out " + q(fresh_dir("viz_bad")) +
            " --records 50 --T 2").code == 2);
}

TEST_CASE("ablate runs the baseline plus one row per disabled channel") {
  const fs::path out = fresh_dir("ablate");
  RunResult r = run("ablate --dataset " + q(shared_data()) + " --out " +
                    q(out) + " --flags none,grad_means --steps 2 --batch 2 "
                    "--T 2 --eval-records 2 --seed 6");
  CHECK(r.code == 0);
  CHECK(data_rows(out / "ablation.csv") == 3);  // baseline + none + grad_means
  const std::string csv = slurp(out / "ablation.csv");
  CHECK(csv.find("baseline") != std::string::npos);
  CHECK(csv.find("none") != std::string::npos);
  CHECK(csv.find("grad_means") != std::string::npos);
  CHECK(fs::exists(out / "baseline" / "ckpt_latest.iodc"));
  CHECK(fs::exists(out / "ablate_grad_means" / "ckpt_latest.iodc"));

  // unknown channel names are rejected before any training starts
  RunResult bad = run("ablate --dataset " + q(shared_data()) + " --out " +
                      q(fresh_dir("ablate_bad")) + " --flags bogus --steps 1");
  CHECK(bad.code == 2);
  CHECK(bad.contains("bogus"));
}
