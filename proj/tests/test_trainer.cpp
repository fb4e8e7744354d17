// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

#include "doctest.h"
#include "ssvod/experiment.hpp"
#include "ssvod/trainer.hpp"

using namespace ssvod;

namespace {

DetectorParams random_params(std::uint64_t seed, double scale = 1.0) {
  DetectorConfig cfg;
  cfg.depth = 4;
  DetectorParams p = DetectorParams::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto t : p.tensors()) {
    for (double& v : t) v = u(rng);
  }
  return p;
}

double max_gap(const DetectorParams& a, const DetectorParams& b) {
  double g = 0.0;
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) {
    for (std::size_t i = 0; i < ta[k].size(); ++i) g = std::max(g, std::abs(ta[k][i] - tb[k][i]));
  }
  return g;
}

VideoClip ramp_clip() {
  VideoClip c;
  c.video = 0;
  c.key_index = 5;
  c.key = Frame(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      for (int ch = 0; ch < 3; ++ch) c.key.at(x, y, ch) = static_cast<float>((x + 2 * y + ch) % 17) / 16.0f;
    }
  }
  c.refs = {c.key, c.key};
  c.offsets = {-1, 1};
  c.annotations = {{2, BBox(10, 10, 20, 20), 0}};
  return c;
}

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    VideoSpec spec;
    return generate_dataset(spec, 4, 17);
  }();
  return ds;
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.iterations = 12;
  cfg.detector.depth = 8;
  cfg.seed = seed;
  cfg.sparsity.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("ema_update examples") {
  DetectorParams s = random_params(1), t = s;
  ema_update(t, s, 0.99);
  CHECK(t == s);

  DetectorParams one = random_params(2), zero = one;
  for (auto x : one.tensors()) std::fill(x.begin(), x.end(), 1.0);
  for (auto x : zero.tensors()) std::fill(x.begin(), x.end(), 0.0);
  ema_update(one, zero, 0.99);
  for (auto x : std::as_const(one).tensors()) {
    for (double v : x) REQUIRE(v == doctest::Approx(0.99).epsilon(1e-15));
  }

  CHECK_THROWS_AS(ema_update(one, zero, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ema_update(one, zero, 0.0), std::invalid_argument);
  DetectorConfig other;
  other.depth = 6;
  CHECK_THROWS_AS(ema_update(one, DetectorParams::zeros(other), 0.9), std::invalid_argument);
}

TEST_CASE("ema with a frozen student converges geometrically") {
  const DetectorParams student = random_params(3);
  DetectorParams teacher = random_params(4);
  const double g0 = max_gap(teacher, student);
  for (const double m : {0.99, 0.9, 0.5}) {
    DetectorParams t = teacher;
    for (int n = 1; n <= 100; ++n) {
      ema_update(t, student, m);
      REQUIRE(std::abs(max_gap(t, student) - std::pow(m, n) * g0) <= 1e-12);
    }
  }
}

TEST_CASE("weak augmentation flips the whole set or nothing") {
  const VideoClip c = ramp_clip();
  int flips = 0;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 400; ++i) {
    const AugmentedClip a = augment_weak(c, rng);
    CHECK(a.record.translate == std::array<int, 2>{0, 0});
    CHECK(a.record.cutout.empty());
    for (const auto& r : a.clip.refs) REQUIRE(r == a.clip.key);
    if (!a.record.flip) {
      REQUIRE(a.record.is_identity());
      REQUIRE(a.clip.key == c.key);
      REQUIRE(a.clip.annotations == c.annotations);
    } else {
      ++flips;
      REQUIRE(a.clip.annotations[0].bbox == BBox(44, 10, 54, 20));
      REQUIRE(apply_augment(a.clip, a.record).key == c.key);
      REQUIRE(apply_augment(a.clip, a.record).annotations == c.annotations);
    }
  }
  CHECK(flips > 150);
  CHECK(flips < 250);
}

TEST_CASE("strong augmentation examples") {
  const VideoClip c = ramp_clip();
  StrongAugmentOptions none;
  none.flip_p = none.brightness_p = none.contrast_p = none.translate_p = 0.0;
  none.cutout_min = none.cutout_max = 0;
  std::mt19937_64 rng(6);
  const AugmentedClip id = augment_strong(c, rng, none);
  CHECK(id.record.is_identity());
  CHECK(id.clip.key == c.key);
  CHECK(id.clip.annotations == c.annotations);

  AugmentRecord shift;
  shift.translate = {6, 0};
  const VideoClip s = apply_augment(c, shift);
  CHECK(s.annotations[0].bbox == BBox(16, 10, 26, 20));
  CHECK(s.key.at(3, 7, 0) == 0.0f);  // vacated
  CHECK(s.key.at(30, 7, 1) == c.key.at(24, 7, 1));

  // a box pushed off the frame is dropped
  AugmentRecord out;
  out.translate = {-30, 0};
  CHECK(apply_augment(c, out).annotations.empty());

  AugmentRecord cut;
  cut.cutout = {{12, 12, 16, 40}};
  const VideoClip k = apply_augment(c, cut);
  CHECK(k.annotations == c.annotations);
  CHECK(k.key.at(13, 20, 2) == 0.0f);
  CHECK(k.key.at(20, 20, 2) == c.key.at(20, 20, 2));

  AugmentRecord photo;
  photo.brightness = 0.8;
  photo.contrast = 1.5;
  const Frame p = apply_augment(c.key, photo);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const double want = std::clamp((c.key.at(x, y, 0) + 0.8 - 0.5) * 1.5 + 0.5, 0.0, 1.0);
      REQUIRE(p.at(x, y, 0) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("strong draws stay inside their ranges and are shared by the set") {
  const StrongAugmentOptions opt;
  std::mt19937_64 rng(8);
  VideoClip c = ramp_clip();
  c.refs = {c.key, c.key, c.key};
  for (int i = 0; i < 300; ++i) {
    const AugmentedClip a = augment_strong(c, rng, opt);
    const auto& r = a.record;
    REQUIRE(std::abs(r.translate[0]) <= 6);
    REQUIRE(std::abs(r.translate[1]) <= 6);
    REQUIRE(std::abs(r.brightness) <= opt.brightness_max);
    REQUIRE(r.contrast >= opt.contrast_min);
    REQUIRE(r.contrast <= opt.contrast_max);
    REQUIRE(r.cutout.size() <= 5);
    for (const auto& q : r.cutout) {
      REQUIRE(q.x1 - q.x0 <= 13);
      REQUIRE(q.y1 - q.y0 <= 13);
    }
    for (const auto& f : a.clip.refs) REQUIRE(f == a.clip.key);
    for (const auto& p : a.clip.key.data()) {
      REQUIRE(p >= 0.0f);
      REQUIRE(p <= 1.0f);
    }
  }
}

TEST_CASE("map_pseudo_labels examples and round trip") {
  PseudoLabelSet ps;
  ps.p_bbox = {BBox(10, 10, 20, 20)};
  ps.p_cls = {{BBox(30, 5, 40, 15), 3}};
  ps.p_soft = {{BBox(2, 40, 12, 50), ClassDist({0.1, 0.2, 0.3, 0.2, 0.2})}};
  const AugmentRecord id;
  AugmentRecord flip;
  flip.flip = true;
  AugmentRecord shift;
  shift.translate = {6, 0};

  const PseudoLabelSet same = map_pseudo_labels(ps, id, id, 64, 64);
  CHECK(same.p_bbox == ps.p_bbox);
  CHECK(same.p_cls[0].box == ps.p_cls[0].box);
  CHECK(same.p_soft[0].dist == ps.p_soft[0].dist);

  CHECK(map_pseudo_labels(ps, flip, id, 64, 64).p_bbox[0] == BBox(44, 10, 54, 20));
  CHECK(map_pseudo_labels(ps, id, shift, 64, 64).p_bbox[0] == BBox(16, 10, 26, 20));
  CHECK(map_pseudo_labels(ps, id, shift, 64, 64).p_cls[0].class_id == 3);

  AugmentRecord away;
  away.translate = {-20, 0};
  const PseudoLabelSet gone = map_pseudo_labels(ps, id, away, 64, 64);
  CHECK(gone.p_soft.empty());
  CHECK(gone.p_cls.size() == 1);

  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const AugmentRecord r = draw_strong(rng, 64, 64);
    const PseudoLabelSet m = map_pseudo_labels(ps, r, r, 64, 64);
    REQUIRE(m.p_bbox == ps.p_bbox);
    REQUIRE(m.p_cls[0].box == ps.p_cls[0].box);
    REQUIRE(m.p_soft[0].box == ps.p_soft[0].box);
  }
}

TEST_CASE("train_step with nothing to pseudo-label is a supervised step plus EMA") {
  const Dataset& ds = small_dataset();
  TrainConfig cfg = small_config(1);
  std::mt19937_64 init(1);
  TrainState a;
  a.student = DetectorParams::initialize(cfg.detector, init);
  a.teacher = a.student;
  TrainState b = a;
  std::mt19937_64 rng(2);
  const VideoClip lab = load_clip(ds, 0, 0, std::vector<int>{1, 2}, 9, rng);
  const VideoClip unl = load_clip(ds, 1, 10, std::vector<int>{-1, 2}, 9, rng);
  StepInputs sup;
  sup.labeled = &lab;
  StepInputs both = sup;
  both.unlabeled = &unl;
  both.unlabeled_motion = &ds.videos[1].motion;
  std::mt19937_64 la(3), ua(4), lb(3), ub(4);
  StepDiagnostics diag;
  const LossBreakdown x = train_step(a, sup, cfg, la, ua);
  const LossBreakdown y = train_step(b, both, cfg, lb, ub, &diag);
  // a fresh teacher is below every threshold
  CHECK(diag.pseudo.empty());
  CHECK(y.unsup_cls == 0.0);
  CHECK(y.unsup_bbox == 0.0);
  CHECK(y.unsup_soft == 0.0);
  CHECK(x.sup_cls == y.sup_cls);
  CHECK(x.sup_bbox == y.sup_bbox);
  CHECK(a.student == b.student);
  CHECK(a.teacher == b.teacher);
}

TEST_CASE("train contract") {
  const Dataset& ds = small_dataset();
  TrainConfig cfg = small_config(3);
  const TrainConfig def;
  CHECK(def.lr == 0.005);
  CHECK(def.ema_momentum == 0.99);
  CHECK(def.refs_per_set == 2);
  CHECK(def.ref_range == 9);

  cfg.iterations = 0;
  const TrainResult r0 = train(ds, cfg, TrainMode::Ssvod);
  std::mt19937_64 init(derive_seed(cfg.seed, 1));
  CHECK(r0.state.student == DetectorParams::initialize(cfg.detector, init));
  CHECK(r0.state.teacher == r0.state.student);
  CHECK(r0.history.empty());

  TrainConfig dense = small_config(3);
  dense.sparsity.labeled_key_frames = 15;
  CHECK_THROWS_AS(train(ds, dense, TrainMode::Ssvod), std::invalid_argument);
  CHECK_NOTHROW(train(ds, dense, TrainMode::Supervised));

  TrainConfig bad = small_config(3);
  bad.ema_momentum = 1.0;
  CHECK_THROWS_AS(train(ds, bad, TrainMode::Ssvod), std::invalid_argument);
  bad = small_config(3);
  bad.detector.classes = 4;
  CHECK_THROWS_AS(train(ds, bad, TrainMode::Ssvod), std::invalid_argument);
}

TEST_CASE("training is deterministic and starts with zero unsupervised loss") {
  const Dataset& ds = small_dataset();
  const TrainConfig cfg = small_config(7);
  const TrainResult a = train(ds, cfg, TrainMode::Ssvod);
  const TrainResult b = train(ds, cfg, TrainMode::Ssvod);
  REQUIRE(a.history.size() == 12);
  CHECK(history_csv(a.history) == history_csv(b.history));
  CHECK(a.state.student == b.state.student);
  CHECK(a.state.teacher == b.state.teacher);
  CHECK(a.history[0].unsup_cls == 0.0);
  CHECK(a.history[0].unsup_bbox == 0.0);
  CHECK(a.history[0].sup_cls > 0.0);

  TrainConfig other = cfg;
  other.seed = 8;
  CHECK(history_csv(train(ds, other, TrainMode::Ssvod).history) != history_csv(a.history));

  int calls = 0;
  TrainHooks hooks;
  hooks.on_step = [&](int it, const TrainState&, const LossBreakdown& lb) {
    CHECK(lb.total() == a.history[static_cast<std::size_t>(it)].total());
    CHECK(it == calls++);
  };
  train(ds, cfg, TrainMode::Ssvod, hooks);
  CHECK(calls == 12);
}

TEST_CASE("history_csv layout") {
  LossBreakdown l;
  l.sup_cls = 1.5;
  l.unsup_soft = 0.25;
  const std::string csv = history_csv({l});
  CHECK(csv == "iteration,sup_cls,sup_bbox,unsup_cls,unsup_bbox,unsup_soft,total\n"
               "0,1.5,0,0,0,0.25,1.75\n");
}
