// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "ssvod/experiment.hpp"
#include "ssvod/image.hpp"

using namespace ssvod;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("ssvod_exp_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SSVOD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// A tiny dataset shared by the command tests.
const fs::path& tiny_dataset() {
  static const TempDir dir("tiny_ds");
  static const bool made = [] {
    GenDataOptions g;
    g.out_dir = (dir.path / "ds").string();
    g.videos = 3;
    g.seed = 5;
    std::ostringstream log;
    cmd_gen_data(g, log);
    return true;
  }();
  (void)made;
  static const fs::path p = dir.path / "ds";
  return p;
}

ExperimentConfig tiny_config(const fs::path& out, TrainMode mode, std::uint64_t seed) {
  ExperimentConfig c;
  c.dataset = tiny_dataset().string();
  c.eval_dataset = tiny_dataset().string();
  c.output_dir = out.string();
  c.mode = mode;
  c.seed = seed;
  c.train.seed = seed;
  c.train.sparsity.seed = seed;
  c.train.iterations = 6;
  c.train.detector.depth = 8;
  c.eval.refs = 2;
  return c;
}

}  // namespace

TEST_CASE("config echo round trip and strictness") {
  ExperimentConfig c;
  c.dataset = "data";
  c.output_dir = "runs/a";
  c.mode = TrainMode::Supervised;
  c.seed = 9;
  c.train.seed = 9;
  c.train.sparsity.seed = 9;
  c.train.losses.unsup_soft = false;
  c.train.thresholds.gamma_c = 0.7;
  c.train.detector.head_context = 0;
  c.eval.refs = 12;
  const std::string text = config_to_json(c);
  const ExperimentConfig back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.train.thresholds.gamma_c == 0.7);
  CHECK_FALSE(back.train.losses.unsup_soft);

  CHECK_THROWS_AS(config_from_json("{\"datset\": \"x\"}"), UserError);
  CHECK_THROWS_AS(config_from_json("{\"train\": {\"lr\": 0.1, \"lrr\": 1}}"), UserError);
  CHECK_THROWS_AS(config_from_json("{\"train\": {\"detector\": {\"width\": 3}}}"), UserError);
  CHECK_THROWS_AS(config_from_json("{\"mode\": \"semi\"}"), UserError);
  CHECK_THROWS_AS(config_from_json("{\"train\": {\"lr\": \"fast\"}}"), UserError);
  CHECK_THROWS_AS(config_from_json("{\"thresholds\": {\"gamma_c\": 1.5}}"), UserError);
  CHECK_THROWS_AS(config_from_json("not json"), UserError);
  CHECK_THROWS_AS(config_from_json("[1, 2]"), UserError);

  const ExperimentConfig d = config_from_json("{\"seed\": 4}");
  CHECK(d.train.sparsity.seed == 4);
  CHECK(d.train.seed == 4);
  CHECK(d.mode == TrainMode::Ssvod);
  CHECK(d.eval.refs == 30);
  CHECK(d.eval.ref_range == 15);
  CHECK_FALSE(d.eval_teacher);
  CHECK(d.train.sparsity.key_frames == 15);
  CHECK(d.train.sparsity.labeled_key_frames == 1);

  // seeds and paths do not enter the hash
  ExperimentConfig e = c;
  e.seed = 10;
  e.train.sparsity.seed = 10;
  e.output_dir = "elsewhere";
  CHECK(config_hash(e) == config_hash(c));
  e.train.lr = 0.001;
  CHECK(config_hash(e) != config_hash(c));
}

TEST_CASE("gen-data refuses to overwrite without force") {
  const TempDir d("gen");
  GenDataOptions g;
  g.out_dir = (d.path / "ds").string();
  g.videos = 2;
  std::ostringstream log;
  const Dataset ds = cmd_gen_data(g, log);
  CHECK(ds.num_videos() == 2);
  CHECK(fs::exists(d.path / "ds" / "meta.json"));
  CHECK(log.str().find("2 videos") != std::string::npos);
  CHECK_THROWS_AS(cmd_gen_data(g, log), UserError);
  g.force = true;
  CHECK_NOTHROW(cmd_gen_data(g, log));

  write(d.path / "bad_spec.json", "{\"frames\": 1}");
  GenDataOptions bad;
  bad.out_dir = (d.path / "other").string();
  bad.spec_file = (d.path / "bad_spec.json").string();
  CHECK_THROWS_AS(cmd_gen_data(bad, log), UserError);
  bad.spec_file = (d.path / "missing.json").string();
  CHECK_THROWS_AS(cmd_gen_data(bad, log), UserError);
}

TEST_CASE("train writes a reproducible run directory") {
  const TempDir d("train");
  std::ostringstream log;
  const ExperimentConfig c = tiny_config(d.path / "a", TrainMode::Ssvod, 3);
  const TrainOutcome a = cmd_train(c, 1, log);
  for (const char* f : {"config.json", "history.csv", "loss_curves.svg", "student_final.svdp",
                        "teacher_final.svdp", "report.json", "report.csv"}) {
    CHECK(fs::exists(d.path / "a" / f));
  }
  REQUIRE(a.report.has_value());
  const auto rep = nlohmann::json::parse(read_text_file(d.path / "a" / "report.json"));
  for (const char* k : {"mAP@0.5", "mAP@0.75", "mAP@0.5:0.95", "size", "motion"}) {
    CHECK(rep.contains(k));
  }

  // the echoed config re-runs to the same history
  ExperimentConfig echo = config_from_json(read_text_file(d.path / "a" / "config.json"));
  echo.output_dir = (d.path / "b").string();
  cmd_train(echo, 1, log);
  CHECK(read_text_file(d.path / "a" / "history.csv") == read_text_file(d.path / "b" / "history.csv"));
  CHECK(read_text_file(d.path / "a" / "loss_curves.svg") ==
        read_text_file(d.path / "b" / "loss_curves.svg"));

  ExperimentConfig ckpt = c;
  ckpt.output_dir = (d.path / "c").string();
  ckpt.train.checkpoint_every = 3;
  ckpt.eval_dataset.clear();
  const TrainOutcome oc = cmd_train(ckpt, 1, log);
  CHECK_FALSE(oc.report.has_value());
  CHECK(fs::exists(d.path / "c" / "student_0003.svdp"));
  CHECK(fs::exists(d.path / "c" / "teacher_0006.svdp"));

  ExperimentConfig nodata = c;
  nodata.dataset = (d.path / "nowhere").string();
  CHECK_THROWS_AS(cmd_train(nodata, 1, log), UserError);
}

TEST_CASE("eval, inspect-pseudo and report commands") {
  const TempDir d("cmds");
  std::ostringstream log;
  const ExperimentConfig sup = tiny_config(d.path / "sup1", TrainMode::Supervised, 1);
  cmd_train(sup, 1, log);

  EvalCommandOptions ev;
  ev.checkpoint = (d.path / "sup1" / "student_final.svdp").string();
  ev.dataset = tiny_dataset().string();
  ev.out_dir = (d.path / "eval").string();
  ev.eval.refs = 2;
  ev.write_curves = true;
  const EvalReport r1 = cmd_eval(ev, log);
  const EvalReport r2 = cmd_eval(ev, log);
  CHECK(report_to_json(r1) == report_to_json(r2));
  CHECK(fs::exists(d.path / "eval" / "curves" / "pr_class_0.csv"));
  // 6 iterations from a zero head is still an untrained detector
  CHECK(r1.map50 < 0.05);

  InspectOptions ins;
  ins.checkpoint = ev.checkpoint;
  ins.dataset = ev.dataset;
  ins.out_file = (d.path / "pseudo.jsonl").string();
  const InspectSummary s = cmd_inspect_pseudo(ins, log);
  int total = 0;
  for (const auto& [name, n] : s.fate_counts) total += n;
  CHECK(total == s.survivors);
  CHECK(read_text_file(d.path / "pseudo.jsonl").empty() == (s.survivors == 0));

  // zeroed head: nothing survives the initial gate
  DetectorConfig dc = config_from_json(read_text_file(d.path / "sup1" / "config.json")).train.detector;
  DetectorParams zero = DetectorParams::zeros(dc);
  save_params(d.path / "sup1" / "zero.svdp", zero);
  ins.checkpoint = (d.path / "sup1" / "zero.svdp").string();
  CHECK(cmd_inspect_pseudo(ins, log).survivors == 0);

  ev.checkpoint = (d.path / "missing.svdp").string();
  CHECK_THROWS_AS(cmd_eval(ev, log), UserError);
  DetectorConfig other = dc;
  other.depth = dc.depth + 1;
  save_params(d.path / "wide.svdp", DetectorParams::zeros(other));
  ev.checkpoint = (d.path / "wide.svdp").string();
  ev.config_file = (d.path / "sup1" / "config.json").string();
  CHECK_THROWS_AS(cmd_eval(ev, log), UserError);

  cmd_train(tiny_config(d.path / "sup2", TrainMode::Supervised, 2), 1, log);
  cmd_train(tiny_config(d.path / "ss1", TrainMode::Ssvod, 1), 1, log);
  cmd_train(tiny_config(d.path / "ss2", TrainMode::Ssvod, 2), 1, log);
  const std::vector<std::string> runs = {(d.path / "sup1").string(), (d.path / "sup2").string(),
                                         (d.path / "ss1").string(), (d.path / "ss2").string()};
  const auto rows = collect_report(runs, log);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].mode == "supervised");
  CHECK(rows[0].runs.size() == 2);
  REQUIRE(rows[0].stddev.has_value());
  CHECK_FALSE(rows[0].delta.has_value());
  REQUIRE(rows[1].delta.has_value());
  CHECK(*rows[1].delta == doctest::Approx(rows[1].mean - rows[0].mean));
  const double m = (rows[0].map50[0] + rows[0].map50[1]) / 2;
  CHECK(rows[0].mean == doctest::Approx(m));

  const std::vector<std::string> one = {(d.path / "ss1").string()};
  const auto single = collect_report(one, log);
  CHECK_FALSE(single[0].stddev.has_value());
  cmd_report(runs, (d.path / "report").string(), log);
  CHECK(fs::exists(d.path / "report" / "comparison.csv"));
  CHECK(fs::exists(d.path / "report" / "comparison.svg"));
  CHECK_THROWS_AS(collect_report({}, log), UserError);
}

TEST_CASE("command-line exit codes") {
  const TempDir d("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") != 0);
  CHECK(run_cli("gen-data --out " + (d.path / "ds").string() + " --videos 2") == 0);
  // an existing non-empty directory is a user error
  CHECK(run_cli("gen-data --out " + (d.path / "ds").string() + " --videos 2") == 1);
  write(d.path / "bad.json", "{\"frames\": 2}");
  CHECK(run_cli("gen-data --spec " + (d.path / "bad.json").string() + " --out " +
                (d.path / "ds2").string()) == 1);

  ExperimentConfig c;
  c.dataset = (d.path / "ds").string();
  c.output_dir = (d.path / "run").string();
  c.train.iterations = 10;
  c.train.detector.depth = 8;
  write(d.path / "cfg.json", config_to_json(c));
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(run_cli("train " + (d.path / "cfg.json").string()) == 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 10.0);
  CHECK(fs::exists(d.path / "run" / "history.csv"));

  write(d.path / "typo.json", "{\"datset\": \"x\"}");
  CHECK(run_cli("train " + (d.path / "typo.json").string()) == 1);
  CHECK(run_cli("train " + (d.path / "absent.json").string()) == 1);
  CHECK(run_cli("train " + (d.path / "cfg.json").string() + " --iterations -1 --out " +
                (d.path / "neg").string()) == 1);

  CHECK(run_cli("eval --checkpoint " + (d.path / "run" / "student_final.svdp").string() +
                " --dataset " + (d.path / "ds").string() + " --out " + (d.path / "ev").string() +
                " --refs 2") == 0);
  CHECK(fs::exists(d.path / "ev" / "report.json"));
  CHECK(run_cli("eval --checkpoint nowhere.svdp --dataset " + (d.path / "ds").string() +
                " --out " + (d.path / "ev").string()) == 1);
  CHECK(run_cli("report " + (d.path / "run").string()) == 1);  // no report.json
}
