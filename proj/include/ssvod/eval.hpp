// SPDX-License-Identifier: Apache-2.0
//
// Detection evaluation: all-point interpolated AP, mAP over IoU ranges,
// size/motion breakdowns and the confusion matrix.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssvod/core.hpp"
#include "ssvod/flow.hpp"

namespace ssvod {

/// Detections and ground truth of one image.
struct ImageEval {
  std::vector<Detection> dets;
  std::vector<Annotation> gts;
  /// Mean IoU of each gt box with its own boxes at t-1 / t+1; parallel to
  /// gts, empty when motion truth is unavailable.
  std::vector<double> gt_motion_iou;
};

struct PrPoint {
  double confidence;
  double recall;
  double precision;
};

/// Precision/recall after every distinct confidence level. Detections with
/// equal confidence enter the curve together.
std::vector<PrPoint> pr_curve(std::span<const ImageEval> images, double iou_thresh,
                              int class_id);

/// nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const ImageEval> images,
                                        double iou_thresh, int class_id);
std::optional<double> average_precision(std::span<const Detection> dets,
                                        std::span<const Annotation> gts,
                                        double iou_thresh, int class_id);

/// Unweighted mean over classes with ground truth; 0 when none has any.
double mean_average_precision(std::span<const ImageEval> images, double iou_thresh,
                              int classes);

/// 0.50, 0.55, ..., 0.95
std::vector<double> coco_iou_thresholds();

double map_range(std::span<const ImageEval> images, int classes);

enum class SizeClass { Small, Middle, Large };
enum class MotionClass { Slow, Medium, Fast };

SizeClass size_class(const BBox& box, double frame_w, double frame_h);
MotionClass motion_class(double motion_iou);
std::string to_string(SizeClass s);
std::string to_string(MotionClass m);

/// Mean IoU of track's box at t with its boxes at t-1 and t+1 (whichever exist).
double motion_iou(const ObjectTrack& track, int t);

struct CategoryReport {
  std::string name;
  int num_gt = 0;
  double map50 = 0.0;
  double map_range = 0.0;
};

struct Breakdown {
  std::vector<CategoryReport> size;    // small, middle, large
  std::vector<CategoryReport> motion;  // slow, medium, fast
};

/// AP restricted to gts of one category. Detections whose best overlap is an
/// out-of-category gt are ignored rather than counted as false positives.
/// Throws std::invalid_argument if any image lacks motion truth.
Breakdown breakdown(std::span<const ImageEval> images, int classes, double frame_w,
                    double frame_h);

/// C x (C+1) counts; the last column counts missed gts.
std::vector<std::vector<int>> confusion_matrix(std::span<const ImageEval> images,
                                               int classes, double iou_thresh = 0.5,
                                               double conf_thresh = 0.5);

struct ClassAp {
  int class_id = 0;
  int num_gt = 0;
  std::vector<double> ap;  // one per threshold; empty when num_gt == 0
};

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<ClassAp> per_class;
  double map50 = 0.0;
  double map75 = 0.0;
  double map_range = 0.0;
  Breakdown breakdown;
  std::vector<std::vector<int>> confusion;
  int images = 0;
};

EvalReport evaluate_detections(std::span<const ImageEval> images, int classes,
                               double frame_w, double frame_h);

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
std::string report_to_csv(const EvalReport& r);
std::string pr_curve_csv(std::span<const PrPoint> curve);

}  // namespace ssvod
