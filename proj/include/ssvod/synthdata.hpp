// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic videos of moving textured shapes with exact boxes
// and motion truth, plus annotation-sparsity sampling.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssvod/core.hpp"
#include "ssvod/flow.hpp"
#include "ssvod/image.hpp"

namespace ssvod {

std::uint64_t splitmix64(std::uint64_t x);
/// Independent stream seed derived from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct VideoSpec {
  int frames = 31;
  int width = 64;
  int height = 64;
  int classes = 5;
  int min_objects = 1;
  int max_objects = 3;
  double min_size = 8.0;
  double max_size = 16.0;
  double max_speed = 3.0;          // px/frame
  double max_acceleration = 0.3;   // px/frame^2
  double appearance_noise = 0.06;  // per-pixel sigma
  double blur_length = 8.0;        // smear length at full blur strength, px
  std::array<double, 2> camera_velocity = {0.5, 0.3};
  /// Round sizes, start corners and velocities to whole pixels.
  bool integer_motion = false;

  static constexpr int kMaxClasses = 6;
  void validate() const;
};

struct Video {
  std::vector<Frame> frames;
  std::vector<std::vector<Annotation>> annotations;  // per frame
  MotionTruth motion;
  std::vector<int> key_frames;
  std::vector<int> labeled;
};

struct Dataset {
  VideoSpec spec;
  std::uint64_t seed = 0;
  std::vector<Video> videos;

  int num_videos() const { return static_cast<int>(videos.size()); }
};

/// n uniformly strided indices in [0, frames).
std::vector<int> key_frame_indices(int frames, int n);

Video generate_video(const VideoSpec& spec, std::uint64_t seed, int video_index);

/// Videos are generated from independent per-index streams, so the result
/// does not depend on `threads`.
Dataset generate_dataset(const VideoSpec& spec, int num_videos, std::uint64_t seed,
                         int threads = 1);

/// Layout: meta.json, video_%04d/frame_%04d.ppm, video_%04d/annotations.json,
/// video_%04d/motion.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::string spec_to_json(const VideoSpec& spec);
VideoSpec spec_from_json(const std::string& text);

struct SparsityPlan {
  int key_frames = 15;
  int labeled_key_frames = 1;
  /// Cap on unlabeled key frames per video; -1 keeps every non-labeled key frame.
  int unlabeled_key_frames = -1;
  double labeled_video_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate(int frames) const;
};

struct VideoSplit {
  std::vector<int> key_frames;
  std::vector<int> labeled;
  std::vector<int> unlabeled;
};

std::vector<VideoSplit> sample_sparsity(const Dataset& ds, const SparsityPlan& plan);

struct VideoClip {
  int video = -1;
  int key_index = -1;
  Frame key;
  std::vector<Frame> refs;
  std::vector<int> offsets;  // per reference, after boundary re-sampling
  std::vector<Annotation> annotations;  // key-frame ground truth
};

/// Out-of-range offsets are re-sampled uniformly from the valid offsets in
/// [-range, range] \ {0}.
VideoClip load_clip(const Dataset& ds, int video, int t, std::span<const int> offsets,
                    int range, std::mt19937_64& rng);

/// Replaces every offset that leaves [0, frames) for key index t by one drawn
/// uniformly from the valid offsets in [-range, range] \ {0}.
std::vector<int> resolve_offsets(int t, int frames, std::span<const int> offsets, int range,
                                 std::mt19937_64& rng);

/// `count` offsets drawn uniformly from [-range, range] \ {0}.
std::vector<int> draw_offsets(int count, int range, std::mt19937_64& rng);

/// Every offset in [-range, range] \ {0}, ascending.
std::vector<int> all_offsets(int range);

}  // namespace ssvod
