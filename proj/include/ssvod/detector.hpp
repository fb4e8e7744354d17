// SPDX-License-Identifier: Apache-2.0
//
// Toy single-stage grid detector: a per-cell patch embedding, similarity
// weighted aggregation across the frames of a set, and an affine head that
// predicts objectness, class logits and one box per cell. Gradients for all
// loss terms are derived by hand.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "ssvod/core.hpp"
#include "ssvod/flow.hpp"
#include "ssvod/image.hpp"

namespace ssvod {

struct DetectorConfig {
  int grid = 8;
  int depth = 64;
  int classes = 5;
  int patch = 8;
  double temperature = 0.5;
  double decode_floor = 0.05;
  double nms_iou = 0.5;
  /// The head reads the (2r+1)^2 neighborhood of aggregated cell features
  /// around each cell; 0 makes it cell-local.
  int head_context = 1;

  int frame_size() const { return grid * patch; }
  int outputs() const { return 5 + classes; }
  int patch_inputs() const { return patch * patch * 3; }
  int head_inputs() const { return (2 * head_context + 1) * (2 * head_context + 1) * depth; }
  void validate() const;
};

/// Channel layout of one cell's outputs.
struct OutputLayout {
  int classes;
  int obj() const { return 0; }
  int cls(int c) const { return 1 + c; }
  int box(int i) const { return 1 + classes + i; }  // tx, ty, tw, th
};

struct DetectorParams {
  DetectorConfig config;
  std::vector<double> embed_w;  // patch_inputs x depth, row-major
  std::vector<double> embed_b;  // depth
  std::vector<double> head_w;   // head_inputs x outputs, row-major, neighbor-major
  std::vector<double> head_b;   // outputs

  static DetectorParams zeros(const DetectorConfig& cfg);
  /// Gaussian embedding whose bias centers pixel values at 0.5, zero head
  /// weights, objectness bias at logit(kInitObjectness).
  static DetectorParams initialize(const DetectorConfig& cfg, std::mt19937_64& rng);

  std::size_t size() const {
    return embed_w.size() + embed_b.size() + head_w.size() + head_b.size();
  }
  std::array<std::span<double>, 4> tensors() {
    return {embed_w, embed_b, head_w, head_b};
  }
  std::array<std::span<const double>, 4> tensors() const {
    return {embed_w, embed_b, head_w, head_b};
  }
  bool same_shape(const DetectorParams& o) const;
  bool all_finite() const;

  bool operator==(const DetectorParams& o) const {
    return embed_w == o.embed_w && embed_b == o.embed_b && head_w == o.head_w &&
           head_b == o.head_b;
  }
};

using ParamGrads = DetectorParams;

/// "SVDP" checkpoint: magic, u32 version, u32 G/D/C/P, then the four
/// tensors as little-endian f64 in declaration order.
std::vector<std::uint8_t> serialize_params(const DetectorParams& p);
/// `cfg` supplies the non-serialized settings; its shape fields must match
/// the blob.
DetectorParams deserialize_params(std::span<const std::uint8_t> bytes,
                                  const DetectorConfig& cfg);
void save_params(const std::filesystem::path& path, const DetectorParams& p);
DetectorParams load_params(const std::filesystem::path& path, const DetectorConfig& cfg);

class CellOutputs {
 public:
  CellOutputs() = default;
  CellOutputs(int grid, int classes);

  int grid() const { return grid_; }
  int classes() const { return classes_; }
  int cells() const { return grid_ * grid_; }
  int width() const { return classes_ + 5; }
  OutputLayout layout() const { return {classes_}; }

  std::span<double> cell(int i) {
    return std::span<double>(data_).subspan(static_cast<std::size_t>(i * width()),
                                             static_cast<std::size_t>(width()));
  }
  std::span<const double> cell(int i) const {
    return std::span<const double>(data_).subspan(
        static_cast<std::size_t>(i * width()), static_cast<std::size_t>(width()));
  }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const CellOutputs&) const = default;

 private:
  int grid_ = 0;
  int classes_ = 0;
  std::vector<double> data_;
};

FeatureMap extract_features(const Frame& frame, const DetectorParams& params);

/// Per cell: softmax over members (key first) of cosine(key, member) / tau,
/// then the weighted sum of member features.
FeatureMap aggregate(const FeatureMap& key, std::span<const FeatureMap> others,
                     double temperature);

/// Reverse-mode pass of aggregate. `d_others` must have others.size() maps.
void aggregate_backward(const FeatureMap& key, std::span<const FeatureMap> others,
                        double temperature, const FeatureMap& d_out,
                        FeatureMap& d_key, std::span<FeatureMap> d_others);

CellOutputs apply_head(const FeatureMap& agg, const DetectorParams& params);

struct DecodedBox {
  double cx, cy, w, h;
};
DecodedBox decode_cell_box(double tx, double ty, double tw, double th, int row,
                           int col, double cell_px, double frame_w, double frame_h);
/// Inverse of decode_cell_box; `u_eps` clamps the in-cell center fraction
/// away from 0 and 1.
std::array<double, 4> encode_cell_box(const BBox& box, int row, int col,
                                      double cell_px, double u_eps = 0.0);

/// Decode every cell above the floor, NMS, clip.
std::vector<Detection> decode(const CellOutputs& out, const DetectorConfig& cfg);

struct ForwardResult {
  CellOutputs outputs;
  std::vector<Detection> detections;
};

ForwardResult forward(const FeatureSet& set, const DetectorParams& params);

/// Activations of a raw set kept for the backward pass.
struct ForwardTrace {
  const Frame* key_frame = nullptr;
  std::vector<const Frame*> ref_frames;
  FeatureMap key;
  std::vector<FeatureMap> refs;
  FeatureMap aggregated;
  CellOutputs outputs;
};

ForwardTrace forward_trace(const Frame& key, std::span<const Frame* const> refs,
                           const DetectorParams& params);

/// Accumulates parameter gradients for d(loss)/d(outputs) into `grads`.
void backward(const ForwardTrace& trace, const CellOutputs& d_outputs,
              const DetectorParams& params, ParamGrads& grads);

struct TargetLabel {
  std::optional<int> class_id;
  BBox box;
};

struct GridTargets {
  int grid = 0;
  std::vector<std::uint8_t> positive;
  /// Cells excluded from the objectness term.
  std::vector<std::uint8_t> ignore;
  std::vector<int> class_id;  // -1 when no trusted class
  std::vector<std::array<double, 4>> box;

  static GridTargets empty(int grid);
  int num_positive() const;
};

inline constexpr double kTargetCenterEps = 0.01;
/// Objectness probability of a freshly initialized head.
inline constexpr double kInitObjectness = 0.05;

int center_cell(const BBox& box, int grid, double frame_w, double frame_h);

/// The cell containing a box center is positive for it; the larger box wins
/// a shared cell.
GridTargets assign_targets(std::span<const TargetLabel> labels, int grid,
                           double frame_w, double frame_h);

struct SoftMatch {
  int cell;
  ClassDist target;
};

struct LossBreakdown {
  double sup_cls = 0.0;
  double sup_bbox = 0.0;
  double unsup_cls = 0.0;
  double unsup_bbox = 0.0;
  double unsup_soft = 0.0;

  double total() const { return sup_cls + sup_bbox + unsup_cls + unsup_bbox + unsup_soft; }
  bool all_finite() const;
  bool operator==(const LossBreakdown&) const = default;
};

struct LossOptions {
  double smooth_l1_beta = 1.0;
  /// Divide the objectness BCE sum by the number of positive cells (at
  /// least 1) rather than by the number of contributing cells.
  bool objectness_per_positive = true;
  double kl_eps = kDefaultKlEpsilon;
  /// false: KL(student, teacher) as written; true: KL(teacher, student).
  bool swap_kl_arguments = false;
};

struct LossInputs {
  const CellOutputs* labeled = nullptr;
  const GridTargets* sup = nullptr;
  const CellOutputs* unlabeled = nullptr;
  const GridTargets* pseudo_cls = nullptr;
  const GridTargets* pseudo_bbox = nullptr;
  std::span<const SoftMatch> soft = {};
};

struct LossResult {
  LossBreakdown losses;
  CellOutputs d_labeled;
  CellOutputs d_unlabeled;
};

/// Five-term objective and its gradient with respect to the cell outputs.
/// Unsupervised terms whose pseudo-label set is empty are exactly zero.
LossResult compute_losses(const LossInputs& in, const LossOptions& opt = {});

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// theta <- theta - lr * grad. Throws DivergenceError on non-finite gradients.
void sgd_step(DetectorParams& params, const ParamGrads& grads, double lr);

}  // namespace ssvod
