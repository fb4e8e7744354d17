// SPDX-License-Identifier: Apache-2.0

#include "ssvod/augment.hpp"

#include <algorithm>
#include <cmath>

namespace ssvod {

bool AugmentRecord::is_identity() const {
  return !flip && translate[0] == 0 && translate[1] == 0 && cutout.empty() &&
         brightness == 0.0 && contrast == 1.0;
}

AugmentRecord draw_weak(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AugmentRecord r;
  r.flip = u01(rng) < 0.5;
  return r;
}

AugmentRecord draw_strong(std::mt19937_64& rng, int width, int height,
                          const StrongAugmentOptions& opt) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  AugmentRecord r;
  r.flip = u01(rng) < opt.flip_p;
  if (u01(rng) < opt.brightness_p) r.brightness = uniform(-opt.brightness_max, opt.brightness_max);
  if (u01(rng) < opt.contrast_p) r.contrast = uniform(opt.contrast_min, opt.contrast_max);
  if (u01(rng) < opt.translate_p) {
    r.translate = {
        static_cast<int>(std::lround(uniform(-opt.translate_ratio, opt.translate_ratio) * width)),
        static_cast<int>(std::lround(uniform(-opt.translate_ratio, opt.translate_ratio) * height))};
  }
  std::uniform_int_distribution<int> count(opt.cutout_min, opt.cutout_max);
  const int n = opt.cutout_max > 0 ? count(rng) : 0;
  for (int i = 0; i < n; ++i) {
    const int w = static_cast<int>(std::lround(uniform(0.0, opt.cutout_ratio) * width));
    const int h = static_cast<int>(std::lround(uniform(0.0, opt.cutout_ratio) * height));
    const int x0 = static_cast<int>(u01(rng) * (width - w));
    const int y0 = static_cast<int>(u01(rng) * (height - h));
    if (w > 0 && h > 0) r.cutout.push_back({x0, y0, x0 + w, y0 + h});
  }
  return r;
}

Frame apply_augment(const Frame& f, const AugmentRecord& rec) {
  const int w = f.width(), h = f.height();
  Frame out(w, h, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Output pixel (x, y) pulls from the source through the inverse geometry.
      const int xs0 = x - rec.translate[0];
      const int ys = y - rec.translate[1];
      if (xs0 < 0 || xs0 >= w || ys < 0 || ys >= h) continue;
      const int xs = rec.flip ? w - 1 - xs0 : xs0;
      for (int c = 0; c < 3; ++c) {
        double v = f.at(xs, ys, c);
        v = (v + rec.brightness - 0.5) * rec.contrast + 0.5;
        out.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  for (const auto& r : rec.cutout) {
    for (int y = std::max(0, r.y0); y < std::min(h, r.y1); ++y) {
      for (int x = std::max(0, r.x0); x < std::min(w, r.x1); ++x) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.0f;
      }
    }
  }
  return out;
}

std::optional<BBox> augment_box(const BBox& b, const AugmentRecord& rec, int width,
                                int height) {
  double x1 = b.x1(), x2 = b.x2();
  if (rec.flip) {
    x1 = width - b.x2();
    x2 = width - b.x1();
  }
  const BBox g(x1 + rec.translate[0], b.y1() + rec.translate[1], x2 + rec.translate[0],
               b.y2() + rec.translate[1]);
  return clip_box(g, width, height);
}

BBox unaugment_box(const BBox& b, const AugmentRecord& rec, int width) {
  const BBox t = b.translated(-rec.translate[0], -rec.translate[1]);
  if (!rec.flip) return t;
  return BBox(width - t.x2(), t.y1(), width - t.x1(), t.y2());
}

VideoClip apply_augment(const VideoClip& clip, const AugmentRecord& rec) {
  VideoClip out;
  out.video = clip.video;
  out.key_index = clip.key_index;
  out.offsets = clip.offsets;
  out.key = apply_augment(clip.key, rec);
  for (const auto& r : clip.refs) out.refs.push_back(apply_augment(r, rec));
  for (const auto& a : clip.annotations) {
    if (auto b = augment_box(a.bbox, rec, clip.key.width(), clip.key.height())) {
      out.annotations.push_back({a.class_id, *b, a.track_id});
    }
  }
  return out;
}

AugmentedClip augment_weak(const VideoClip& clip, std::mt19937_64& rng) {
  AugmentedClip out;
  out.record = draw_weak(rng);
  out.clip = apply_augment(clip, out.record);
  return out;
}

AugmentedClip augment_strong(const VideoClip& clip, std::mt19937_64& rng,
                             const StrongAugmentOptions& opt) {
  AugmentedClip out;
  out.record = draw_strong(rng, clip.key.width(), clip.key.height(), opt);
  out.clip = apply_augment(clip, out.record);
  return out;
}

PseudoLabelSet map_pseudo_labels(const PseudoLabelSet& pseudo, const AugmentRecord& weak,
                                 const AugmentRecord& strong, int width, int height) {
  auto map = [&](const BBox& b) {
    return augment_box(unaugment_box(b, weak, width), strong, width, height);
  };
  PseudoLabelSet out;
  for (const auto& b : pseudo.p_bbox) {
    if (auto m = map(b)) out.p_bbox.push_back(*m);
  }
  for (const auto& h : pseudo.p_cls) {
    if (auto m = map(h.box)) out.p_cls.push_back({*m, h.class_id});
  }
  for (const auto& s : pseudo.p_soft) {
    if (auto m = map(s.box)) out.p_soft.push_back({*m, s.dist});
  }
  for (const auto& d : pseudo.discarded) {
    if (auto m = map(d.bbox)) out.discarded.emplace_back(*m, d.class_dist, d.confidence);
  }
  const bool has_scores = pseudo.scores.xiou.size() == pseudo.survivors.size();
  for (std::size_t k = 0; k < pseudo.survivors.size(); ++k) {
    const auto& d = pseudo.survivors[k];
    auto m = map(d.bbox);
    if (!m) continue;
    out.survivors.emplace_back(*m, d.class_dist, d.confidence);
    if (k < pseudo.fates.size()) out.fates.push_back(pseudo.fates[k]);
    if (has_scores) {
      out.scores.xiou.push_back(pseudo.scores.xiou[k]);
      out.scores.xdiv.push_back(pseudo.scores.xdiv[k]);
      if (k < pseudo.scores.matches.size()) out.scores.matches.push_back(pseudo.scores.matches[k]);
    }
  }
  return out;
}

}  // namespace ssvod
