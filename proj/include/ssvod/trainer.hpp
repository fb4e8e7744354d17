// SPDX-License-Identifier: Apache-2.0
//
// EMA teacher-student training in supervised-only and semi-supervised modes,
// and clip-level evaluation with many reference frames.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ssvod/augment.hpp"
#include "ssvod/detector.hpp"
#include "ssvod/eval.hpp"
#include "ssvod/pseudo.hpp"
#include "ssvod/synthdata.hpp"

namespace ssvod {

enum class TrainMode { Supervised, Ssvod };
enum class FlowSource { Analytic, BlockMatching };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);
std::string to_string(FlowSource f);
FlowSource flow_source_from_string(const std::string& s);
std::string to_string(SelectionMode m);
SelectionMode selection_mode_from_string(const std::string& s);

struct FlowOptions {
  FlowSource source = FlowSource::Analytic;
  double noise_sigma = 0.5;  // analytic only
  int block = 7;             // block matching only
  int radius = 4;
};

struct LossToggles {
  bool unsup_cls = true;
  bool unsup_bbox = true;
  bool unsup_soft = true;
};

struct TrainConfig {
  int iterations = 5000;
  double lr = 0.005;
  double ema_momentum = 0.99;
  int refs_per_set = 2;
  int ref_range = 9;
  SelectionThresholds thresholds;
  SelectionMode selection = SelectionMode::ThreeStage;
  LossToggles losses;
  LossOptions loss_options;
  /// Treat cells without a pseudo-label as background in the unsupervised
  /// objectness terms (cells of teacher survivors left out of a set are still
  /// skipped). Off: only pseudo-labeled cells enter those terms.
  bool pseudo_background = false;
  FlowOptions flow;
  StrongAugmentOptions strong;
  DetectorConfig detector;
  SparsityPlan sparsity;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  void validate() const;
};

/// theta_T <- m * theta_T + (1 - m) * theta_S.
void ema_update(DetectorParams& teacher, const DetectorParams& student, double m);

struct TrainState {
  DetectorParams student;
  DetectorParams teacher;
};

/// One labeled and one unlabeled set per step; `unlabeled` may be null for
/// supervised steps.
struct StepInputs {
  const VideoClip* labeled = nullptr;
  const VideoClip* unlabeled = nullptr;
  const MotionTruth* unlabeled_motion = nullptr;
};

struct StepDiagnostics {
  PseudoLabelSet pseudo;  // in the student's (strong) view
};

/// Teacher pseudo-labels on the weak view, student losses on the strong
/// views, one SGD step, then the EMA update. `rng` drives augmentation and
/// flow noise. Throws DivergenceError on non-finite losses.
LossBreakdown train_step(TrainState& state, const StepInputs& in, const TrainConfig& cfg,
                         std::mt19937_64& lab_rng, std::mt19937_64& unl_rng,
                         StepDiagnostics* diag = nullptr);

struct TrainResult {
  TrainState state;
  std::vector<LossBreakdown> history;
};

struct TrainHooks {
  /// Called after each completed iteration with the 0-based index.
  std::function<void(int, const TrainState&, const LossBreakdown&)> on_step;
};

/// labeled/unlabeled pools come from sample_sparsity(ds, cfg.sparsity).
TrainResult train(const Dataset& ds, const TrainConfig& cfg, TrainMode mode,
                  const TrainHooks& hooks = {});

/// Teacher-side per-frame flows for a clip, key -> reference, at cell level.
std::vector<CellFlow> clip_flows(const VideoClip& clip, const MotionTruth* motion, bool flipped,
                                 const FlowOptions& opt, int grid, std::mt19937_64& rng);

std::string history_csv(const std::vector<LossBreakdown>& history);

/// SVG line chart of the five loss terms.
std::string loss_curves_svg(const std::vector<LossBreakdown>& history);

struct EvalOptions {
  int refs = 30;
  int ref_range = 15;
  /// Key frames of each video; false evaluates every frame.
  bool key_frames_only = true;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Detections for every evaluated frame of `ds`, with motion IoUs.
std::vector<ImageEval> predict_dataset(const DetectorParams& params, const Dataset& ds,
                                       const EvalOptions& opt);
EvalReport evaluate_model(const DetectorParams& params, const Dataset& ds,
                          const EvalOptions& opt);

/// Teacher pseudo-labels for one unlabeled key frame under both selection
/// modes, from the same prediction sets.
struct PseudoFrame {
  int video = 0;
  int frame = 0;
  PseudoLabelSet three_stage;
  PseudoLabelSet confidence_only;
  std::vector<Annotation> gt;
};

/// Runs the pseudo-label pipeline, without augmentation, over the unlabeled
/// key frames of `plan`.
std::vector<PseudoFrame> inspect_pseudo(const DetectorParams& teacher, const Dataset& ds,
                                        const TrainConfig& cfg, std::uint64_t seed);

}  // namespace ssvod
