// SPDX-License-Identifier: Apache-2.0
//
// Geometric and probabilistic primitives shared by every module: boxes,
// class distributions, detections, IoU, KL divergence and greedy NMS.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace ssvod {

/// Axis-aligned box in corner form, pixel units, origin top-left.
/// Construction rejects empty or non-finite boxes.
class BBox {
 public:
  BBox(double x1, double y1, double x2, double y2);

  double x1() const { return x1_; }
  double y1() const { return y1_; }
  double x2() const { return x2_; }
  double y2() const { return y2_; }
  double width() const { return x2_ - x1_; }
  double height() const { return y2_ - y1_; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1_ + x2_); }
  double center_y() const { return 0.5 * (y1_ + y2_); }

  BBox translated(double dx, double dy) const;

  bool operator==(const BBox&) const = default;

 private:
  double x1_, y1_, x2_, y2_;
};

/// Probability vector over the C foreground classes.
class ClassDist {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit ClassDist(std::vector<double> probs);
  static ClassDist uniform(std::size_t classes);
  /// Numerically stable softmax of raw logits.
  static ClassDist from_logits(std::span<const double> logits);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }
  std::size_t argmax() const;
  double max() const { return probs_[argmax()]; }

  bool operator==(const ClassDist&) const = default;

 private:
  std::vector<double> probs_;
};

struct Detection {
  Detection(BBox box, ClassDist dist, double conf);

  BBox bbox;
  ClassDist class_dist;
  double confidence;
  int hard_class;

  bool operator==(const Detection&) const = default;
};

struct Annotation {
  int class_id;
  BBox bbox;
  /// Object identity inside its video; -1 when unknown.
  int track_id = -1;

  bool operator==(const Annotation&) const = default;
};

struct RawSource {
  bool operator==(const RawSource&) const = default;
};
struct FlowWarpedSource {
  int offset;
  bool operator==(const FlowWarpedSource&) const = default;
};
using PredictionSource = std::variant<RawSource, FlowWarpedSource>;

/// Key-frame predictions from one feature set, sorted by descending confidence.
struct PredictionSet {
  PredictionSet() = default;
  PredictionSet(std::vector<Detection> dets, PredictionSource src);

  std::vector<Detection> detections;
  PredictionSource source = RawSource{};
};

double iou(const BBox& a, const BBox& b);

inline constexpr double kDefaultKlEpsilon = 1e-8;

/// sum_i p_i ln((p_i + eps) / (q_i + eps)). Throws std::invalid_argument on
/// a length mismatch.
double kl_divergence(const ClassDist& p, const ClassDist& q,
                     double eps = kDefaultKlEpsilon);

/// Greedy class-agnostic suppression. Ties on confidence keep the earlier
/// index. Output is sorted by descending confidence.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

/// Clamps to [0,width]x[0,height]; nullopt when the clamp collapses the box.
std::optional<BBox> clip_box(const BBox& b, double width, double height);

/// Stable sort by descending confidence.
void sort_by_confidence(std::vector<Detection>& dets);

}  // namespace ssvod
