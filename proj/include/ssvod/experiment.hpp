// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration (strict JSON) and the command implementations
// behind the command-line tool.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssvod/trainer.hpp"

namespace ssvod {

/// Bad input from the user: missing files, invalid configs, refused
/// overwrites. Mapped to exit code 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string dataset;
  /// Dataset scored after training; empty skips the final evaluation.
  std::string eval_dataset;
  std::string output_dir;
  TrainMode mode = TrainMode::Ssvod;
  TrainConfig train;
  EvalOptions eval;
  bool eval_teacher = false;
  std::uint64_t seed = 0;
};

/// Fully resolved JSON echo.
std::string config_to_json(const ExperimentConfig& cfg);
/// Missing keys take defaults, unknown keys throw UserError. A missing
/// sparsity seed follows the top-level seed.
ExperimentConfig config_from_json(const std::string& text);

/// Hash of the config without seeds and paths, so repeated seeds of one
/// setting share it.
std::string config_hash(const ExperimentConfig& cfg);

struct GenDataOptions {
  std::optional<std::string> spec_file;
  std::string out_dir;
  int videos = 60;
  std::uint64_t seed = 0;
  bool force = false;
  int threads = 1;
};
Dataset cmd_gen_data(const GenDataOptions& opt, std::ostream& log);

struct TrainOutcome {
  TrainResult result;
  std::optional<EvalReport> report;
};
/// Trains and writes config.json, history.csv, checkpoints, loss_curves.svg
/// and, with an eval dataset, report.json / report.csv into output_dir.
TrainOutcome cmd_train(const ExperimentConfig& cfg, int threads, std::ostream& log);

/// Same as cmd_train with an already loaded training set (and optional
/// evaluation set); no dataset I/O.
TrainOutcome run_experiment(const ExperimentConfig& cfg, const Dataset& train_set,
                            const Dataset* eval_set, int threads, std::ostream& log);

struct EvalCommandOptions {
  std::string checkpoint;
  std::string dataset;
  std::string out_dir;
  std::optional<std::string> config_file;
  EvalOptions eval;
  bool write_curves = false;
};
EvalReport cmd_eval(const EvalCommandOptions& opt, std::ostream& log);

struct InspectOptions {
  std::string checkpoint;
  std::string dataset;
  std::string out_file;  // JSON lines
  std::optional<std::string> config_file;
  std::uint64_t seed = 0;
};

struct InspectSummary {
  PseudoQuality three_stage;
  PseudoQuality confidence_only;
  int survivors = 0;
  std::vector<std::pair<std::string, int>> fate_counts;
};
InspectSummary summarize_pseudo(const std::vector<PseudoFrame>& frames, int classes);
std::string pseudo_jsonl(const std::vector<PseudoFrame>& frames);
InspectSummary cmd_inspect_pseudo(const InspectOptions& opt, std::ostream& log);

struct ReportRow {
  std::string hash;
  std::string mode;
  std::string label;
  std::vector<std::string> runs;
  std::vector<double> map50;
  double mean = 0.0;
  std::optional<double> stddev;  // sample std, absent for a single run
  std::optional<double> delta;   // vs the supervised row of the same setting
};
std::vector<ReportRow> collect_report(const std::vector<std::string>& run_dirs, std::ostream& log);
std::string report_rows_csv(const std::vector<ReportRow>& rows);
void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                std::ostream& log);

/// Loads a checkpoint using the detector settings of `config_file` or, if
/// absent, of a config.json in the checkpoint's directory, else defaults
/// with `classes`.
DetectorParams load_checkpoint(const std::string& path, const std::optional<std::string>& config_file,
                               int classes, TrainConfig* train_out = nullptr);

}  // namespace ssvod
