// SPDX-License-Identifier: Apache-2.0
//
// Optical flow between a key frame and its references, and cell-level
// backward warping of feature maps.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "ssvod/core.hpp"
#include "ssvod/image.hpp"

namespace ssvod {

/// Ground-truth trajectory of one rendered object.
struct ObjectTrack {
  int track_id = 0;
  int class_id = 0;
  std::vector<BBox> boxes;  // one per frame
};

/// Everything the generator knows about motion in one video.
struct MotionTruth {
  int width = 0;
  int height = 0;
  std::vector<ObjectTrack> tracks;
  /// Background content offset per frame; content drawn at texture
  /// coordinate u appears at pixel u + offset.
  std::vector<std::array<double, 2>> background_offset;

  int frames() const { return static_cast<int>(background_offset.size()); }
};

/// Per-pixel displacement, oriented key -> reference.
class FlowField {
 public:
  FlowField() = default;
  FlowField(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }

  float dx(int x, int y) const { return data_[idx(x, y)]; }
  float dy(int x, int y) const { return data_[idx(x, y) + 1]; }
  void set(int x, int y, float dx, float dy) {
    data_[idx(x, y)] = dx;
    data_[idx(x, y) + 1] = dy;
  }

  /// Mirror horizontally, as a flipped clip sees it.
  FlowField flipped_horizontal() const;

  bool operator==(const FlowField&) const = default;

 private:
  std::size_t idx(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) * 2;
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// "SVFL" little-endian blob: magic, u32 W, u32 H, then H*W (dx, dy) f32 pairs.
std::vector<std::uint8_t> serialize_flow(const FlowField& flow);
FlowField deserialize_flow(std::span<const std::uint8_t> bytes);

/// G x G grid of displacements in cell units.
struct CellFlow {
  int grid = 0;
  std::vector<std::array<double, 2>> disp;  // row-major

  std::array<double, 2> at(int r, int c) const {
    return disp[static_cast<std::size_t>(r * grid + c)];
  }
  static CellFlow zeros(int grid);
};

/// G x G x D feature lattice.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int grid, int depth);

  int grid() const { return grid_; }
  int depth() const { return depth_; }
  int cells() const { return grid_ * grid_; }

  std::span<double> cell(int index) {
    return std::span<double>(data_).subspan(static_cast<std::size_t>(index * depth_),
                                             static_cast<std::size_t>(depth_));
  }
  std::span<const double> cell(int index) const {
    return std::span<const double>(data_).subspan(
        static_cast<std::size_t>(index * depth_), static_cast<std::size_t>(depth_));
  }
  double& at(int r, int c, int d) {
    return data_[static_cast<std::size_t>((r * grid_ + c) * depth_ + d)];
  }
  double at(int r, int c, int d) const {
    return data_[static_cast<std::size_t>((r * grid_ + c) * depth_ + d)];
  }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const FeatureMap& o) const {
    return grid_ == o.grid_ && depth_ == o.depth_;
  }
  bool operator==(const FeatureMap&) const = default;

 private:
  int grid_ = 0;
  int depth_ = 0;
  std::vector<double> data_;
};

/// Ground-truth flow for key frame t and reference t + offset. Pixels whose
/// centers lie inside an object's box at t move with that object; the rest
/// move with the background. Gaussian noise of `noise_sigma` px is added per
/// pixel when > 0. Throws std::out_of_range for frame indices outside the
/// video.
FlowField analytic_flow(const MotionTruth& truth, int t, int offset,
                        double noise_sigma = 0.0, std::mt19937_64* rng = nullptr);

/// Exhaustive integer SSD search per block. Ties go to the smallest
/// displacement magnitude, then lexicographic (dx, dy).
FlowField estimate_flow_block_matching(const Frame& key, const Frame& ref,
                                       int block, int radius);

/// Mean pixel displacement per cell, divided by the cell size.
CellFlow downsample_flow(const FlowField& flow, int grid);

/// Backward bilinear warp with zero padding: out(p) = ref(p + flow(p)).
FeatureMap warp_feature(const FeatureMap& ref, const CellFlow& flow);

/// A key slot plus the reference features of one set.
struct FeatureSet {
  FeatureMap key;
  std::vector<FeatureMap> references;
  PredictionSource source = RawSource{};
};

struct FeatureSets {
  FeatureSet raw;
  std::vector<FeatureSet> warped;  // one per reference, in reference order
};

/// X_raw plus, for each reference j, the set whose key slot is the reference
/// feature warped onto the key frame.
FeatureSets build_feature_sets(const FeatureMap& key,
                               std::span<const FeatureMap> refs,
                               std::span<const int> offsets,
                               std::span<const CellFlow> cell_flows);

}  // namespace ssvod
