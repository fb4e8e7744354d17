// SPDX-License-Identifier: Apache-2.0
//
// ssvod: data generation, training, evaluation, pseudo-label inspection and
// run comparison.
//
// Exit codes: 0 success, 1 user error (including divergence), 2 internal error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssvod/experiment.hpp"
#include "ssvod/image.hpp"

namespace {

int default_threads() {
  if (const char* env = std::getenv("SSVOD_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid SSVOD_THREADS='" << env << "'\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace ssvod;
  CLI::App app{"Semi-supervised video object detection laboratory"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads, "Worker threads (default: $SSVOD_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  GenDataOptions gen;
  std::string gen_spec;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic video dataset");
  gen_cmd->add_option("--spec", gen_spec, "VideoSpec JSON file (default spec when omitted)");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--videos", gen.videos, "Number of videos")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  std::string train_config;
  std::optional<int> train_iters;
  std::optional<std::uint64_t> train_seed;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a detector from an experiment config");
  train_cmd->add_option("config", train_config, "Experiment config JSON")->required();
  train_cmd->add_option("--iterations", train_iters, "Override train.iterations");
  train_cmd->add_option("--seed", train_seed, "Override the seed");
  train_cmd->add_option("--out", train_out, "Override output_dir");

  EvalCommandOptions ev;
  std::string ev_config;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint (.svdp)")->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out_dir, "Output directory for report.json/csv")->required();
  eval_cmd->add_option("--config", ev_config, "Config supplying detector settings");
  eval_cmd->add_option("--refs", ev.eval.refs, "Reference frames per key frame")->capture_default_str();
  eval_cmd->add_option("--ref-range", ev.eval.ref_range, "Reference offset range")->capture_default_str();
  eval_cmd->add_flag("--all-frames", "Evaluate every frame instead of key frames");
  eval_cmd->add_flag("--curves", ev.write_curves, "Write per-class PR curves");

  InspectOptions ins;
  std::string ins_config;
  auto* ins_cmd = app.add_subcommand("inspect-pseudo", "Dump teacher pseudo-label fates");
  ins_cmd->add_option("--checkpoint", ins.checkpoint, "Teacher checkpoint (.svdp)")->required();
  ins_cmd->add_option("--dataset", ins.dataset, "Dataset directory")->required();
  ins_cmd->add_option("--out", ins.out_file, "JSON-lines output file");
  ins_cmd->add_option("--config", ins_config, "Config supplying thresholds and sparsity");
  ins_cmd->add_option("--seed", ins.seed, "Reference sampling seed")->capture_default_str();

  std::vector<std::string> report_runs;
  std::string report_out = "report";
  auto* rep_cmd = app.add_subcommand("report", "Compare finished runs");
  rep_cmd->add_option("runs", report_runs, "Run directories")->required();
  rep_cmd->add_option("--out", report_out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      if (!gen_spec.empty()) gen.spec_file = gen_spec;
      gen.threads = threads;
      cmd_gen_data(gen, std::cout);
    } else if (*train_cmd) {
      if (!std::filesystem::exists(train_config)) throw UserError("config not found: " + train_config);
      ExperimentConfig cfg = config_from_json(read_text_file(train_config));
      if (train_iters) cfg.train.iterations = *train_iters;
      if (train_seed) {
        cfg.seed = *train_seed;
        cfg.train.seed = *train_seed;
      }
      if (!train_out.empty()) cfg.output_dir = train_out;
      try {
        cfg.train.validate();
      } catch (const std::invalid_argument& e) {
        throw UserError(e.what());
      }
      cmd_train(cfg, threads, std::cout);
    } else if (*eval_cmd) {
      if (!ev_config.empty()) ev.config_file = ev_config;
      ev.eval.key_frames_only = eval_cmd->count("--all-frames") == 0;
      ev.eval.threads = threads;
      cmd_eval(ev, std::cout);
    } else if (*ins_cmd) {
      if (!ins_config.empty()) ins.config_file = ins_config;
      cmd_inspect_pseudo(ins, std::cout);
    } else if (*rep_cmd) {
      cmd_report(report_runs, report_out, std::cout);
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what()
              << " (last good checkpoint written as *_last_good.svdp)\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
