// SPDX-License-Identifier: Apache-2.0
//
// Teacher pseudo-labels from raw and flow-warped prediction sets, scored by
// cross-set box and class consistency and split into box, hard-class and
// soft-class targets.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssvod/core.hpp"
#include "ssvod/detector.hpp"
#include "ssvod/flow.hpp"
#include "ssvod/image.hpp"

namespace ssvod {

struct SelectionThresholds {
  double tau_init = 0.5;
  double gamma_c = 0.8;
  double zeta_iou = 0.9;
  double eta_div = 0.005;

  /// Throws std::invalid_argument unless tau_init, gamma_c, zeta_iou lie in
  /// (0,1) and eta_div > 0.
  void validate() const;
  bool operator==(const SelectionThresholds&) const = default;
};

enum class SelectionMode {
  ThreeStage,
  /// Baseline: boxes and hard classes both gated on confidence > gamma_c.
  ConfidenceOnly,
};

/// KL charged for an offset where the raw object found no match.
inline constexpr double kXdivPenalty = 10.0;

struct PredictionSets {
  PredictionSet raw;                 // gated at tau_init
  std::vector<PredictionSet> warped;  // one per reference
};

/// Teacher predictions on the raw set and on every flow-warped set.
/// Throws std::invalid_argument when there are no references.
PredictionSets gen_prediction_sets(const DetectorParams& teacher, const Frame& key,
                                   std::span<const Frame> refs, std::span<const int> offsets,
                                   std::span<const CellFlow> flows, double tau_init);

/// Per raw object, the index of its best-IoU candidate (lower index on ties),
/// nullopt when `candidates` is empty.
std::vector<std::optional<std::size_t>> match_objects(std::span<const Detection> raw,
                                                      std::span<const Detection> candidates);

struct Match {
  int offset = 0;
  std::optional<std::size_t> index;
  double iou = 0.0;
  double kl = kXdivPenalty;
};

struct ConsistencyScores {
  std::vector<double> xiou;
  std::vector<double> xdiv;
  std::vector<std::vector<Match>> matches;  // [raw object][warped set]
};

/// Means over the warped sets actually present. An empty `warped` is an error.
ConsistencyScores score_consistency(const PredictionSet& raw,
                                    std::span<const PredictionSet> warped);

struct HardLabel {
  BBox box;
  int class_id;
};

struct SoftLabel {
  BBox box;
  ClassDist dist;
};

enum class Fate { Bbox, Cls, Soft, BboxCls, Discarded };
std::string to_string(Fate f);

struct PseudoLabelSet {
  std::vector<BBox> p_bbox;
  std::vector<HardLabel> p_cls;
  std::vector<SoftLabel> p_soft;
  std::vector<Detection> discarded;
  ConsistencyScores scores;
  std::vector<Detection> survivors;
  std::vector<Fate> fates;  // parallel to survivors

  bool empty() const { return p_bbox.empty() && p_cls.empty() && p_soft.empty(); }
};

PseudoLabelSet select(const PredictionSet& raw, const ConsistencyScores& scores,
                      const SelectionThresholds& thr,
                      SelectionMode mode = SelectionMode::ThreeStage);

struct PseudoQuality {
  double map50 = 0.0;
  double bbox_precision = 0.0;  // 0 when p_bbox is empty
  double bbox_recall = 0.0;
  double cls_accuracy = 0.0;    // over p_cls entries that hit a gt at IoU 0.5
  int num_bbox = 0;
  int num_cls = 0;
  int num_soft = 0;
  int num_gt = 0;
};

/// Quality of a single frame's pseudo-labels.
PseudoQuality pseudo_quality(const PseudoLabelSet& pseudo, std::span<const Annotation> gt,
                             int classes);

/// Quality pooled over many frames; mAP treats every p_cls entry as a
/// confidence-1 detection.
PseudoQuality pseudo_quality(std::span<const PseudoLabelSet> pseudo,
                             std::span<const std::vector<Annotation>> gt, int classes);

}  // namespace ssvod
