// SPDX-License-Identifier: Apache-2.0
//
// Weak and strong set-level augmentation and the mapping of teacher
// pseudo-labels from the weak view into the strong view.

#pragma once

#include <array>
#include <optional>
#include <random>
#include <vector>

#include "ssvod/core.hpp"
#include "ssvod/image.hpp"
#include "ssvod/pseudo.hpp"
#include "ssvod/synthdata.hpp"

namespace ssvod {

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct Rect {
  int x0, y0, x1, y1;
  bool operator==(const Rect&) const = default;
};

/// One draw of augmentation parameters, shared by every frame of a set.
/// Geometry is applied first (flip, then translation), then brightness and
/// contrast, then cutout.
struct AugmentRecord {
  bool flip = false;
  std::array<int, 2> translate = {0, 0};  // px, vacated pixels are 0
  std::vector<Rect> cutout;               // filled with 0
  double brightness = 0.0;                // additive
  double contrast = 1.0;                  // scale about 0.5

  bool is_identity() const;
  bool operator==(const AugmentRecord&) const = default;
};

struct StrongAugmentOptions {
  double flip_p = 0.5;
  double brightness_p = 0.1;
  double brightness_max = 0.25;
  double contrast_p = 0.1;
  double contrast_min = 0.5;
  double contrast_max = 1.5;
  double translate_p = 0.3;
  double translate_ratio = 0.1;
  int cutout_min = 1;
  int cutout_max = 5;
  double cutout_ratio = 0.2;
};

AugmentRecord draw_weak(std::mt19937_64& rng);
AugmentRecord draw_strong(std::mt19937_64& rng, int width, int height,
                          const StrongAugmentOptions& opt = {});

Frame apply_augment(const Frame& f, const AugmentRecord& rec);

/// Forward geometry (flip, then translate), clipped; nullopt when clipping
/// collapses the box.
std::optional<BBox> augment_box(const BBox& b, const AugmentRecord& rec, int width,
                                int height);
/// Inverse geometry, without clipping.
BBox unaugment_box(const BBox& b, const AugmentRecord& rec, int width);

struct AugmentedClip {
  VideoClip clip;
  AugmentRecord record;
};

/// Applies `rec` to every frame and to the annotations of `clip`; boxes
/// that clip away are dropped.
VideoClip apply_augment(const VideoClip& clip, const AugmentRecord& rec);

/// Horizontal flip with probability 0.5.
AugmentedClip augment_weak(const VideoClip& clip, std::mt19937_64& rng);
AugmentedClip augment_strong(const VideoClip& clip, std::mt19937_64& rng,
                             const StrongAugmentOptions& opt = {});

/// Moves every box of `pseudo` from the weak view to the strong view. Entries
/// whose boxes clip away are removed, together with their scores and fates.
PseudoLabelSet map_pseudo_labels(const PseudoLabelSet& pseudo, const AugmentRecord& weak,
                                 const AugmentRecord& strong, int width, int height);

}  // namespace ssvod
