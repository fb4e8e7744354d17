// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "ssvod/pseudo.hpp"

using namespace ssvod;

namespace {

Detection det(double x1, double y1, double x2, double y2, double conf,
              ClassDist dist = ClassDist({0.6, 0.1, 0.1, 0.1, 0.1})) {
  return Detection(BBox(x1, y1, x2, y2), std::move(dist), conf);
}

// A raw set plus hand-made scores, for driving select() directly.
struct Scored {
  PredictionSet raw;
  ConsistencyScores scores;
};

Scored scored(std::vector<std::array<double, 3>> conf_xiou_xdiv) {
  std::vector<Detection> d;
  for (std::size_t i = 0; i < conf_xiou_xdiv.size(); ++i) {
    const double x = 10.0 * static_cast<double>(i);
    d.push_back(det(x, 0, x + 5, 5, conf_xiou_xdiv[i][0]));
  }
  Scored s{PredictionSet(d, RawSource{}), {}};
  // PredictionSet reorders by confidence, so look the scores up by box
  for (const auto& r : s.raw.detections) {
    const auto i = static_cast<std::size_t>(r.bbox.x1() / 10.0);
    s.scores.xiou.push_back(conf_xiou_xdiv[i][1]);
    s.scores.xdiv.push_back(conf_xiou_xdiv[i][2]);
  }
  return s;
}

bool contains(const std::vector<BBox>& v, const BBox& b) {
  return std::find(v.begin(), v.end(), b) != v.end();
}

DetectorParams firing_teacher(std::uint64_t seed) {
  DetectorConfig cfg;
  cfg.depth = 8;
  std::mt19937_64 rng(seed);
  DetectorParams p = DetectorParams::initialize(cfg, rng);
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& w : p.head_w) w = n(rng);
  p.head_b[0] = 3.0;
  p.head_b[1] = 4.0;
  return p;
}

Frame noise_frame(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Frame f(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      for (int c = 0; c < 3; ++c) f.at(x, y, c) = static_cast<float>(u(rng));
    }
  }
  return f;
}

}  // namespace

TEST_CASE("threshold validation") {
  SelectionThresholds t;
  CHECK_NOTHROW(t.validate());
  for (double bad : {0.0, 1.0, -0.1, 1.5}) {
    SelectionThresholds a = t, b = t, c = t;
    a.tau_init = bad;
    b.gamma_c = bad;
    c.zeta_iou = bad;
    CHECK_THROWS_AS(a.validate(), std::invalid_argument);
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  t.eta_div = 0.0;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  const Scored s = scored({{0.9, 0.95, 0.001}});
  CHECK_THROWS_AS(select(s.raw, s.scores, t), std::invalid_argument);
}

TEST_CASE("gen_prediction_sets yields one warped set per reference") {
  const DetectorParams p = firing_teacher(1);
  const Frame key = noise_frame(2);
  const std::vector<Frame> refs = {noise_frame(3), noise_frame(4)};
  const std::vector<int> offsets = {-3, 5};
  const std::vector<CellFlow> flows = {CellFlow::zeros(8), CellFlow::zeros(8)};
  const PredictionSets ps = gen_prediction_sets(p, key, refs, offsets, flows, 0.5);
  REQUIRE(ps.warped.size() == 2);
  CHECK(std::get<FlowWarpedSource>(ps.warped[0].source).offset == -3);
  CHECK(std::get<FlowWarpedSource>(ps.warped[1].source).offset == 5);
  CHECK(std::holds_alternative<RawSource>(ps.raw.source));
  CHECK_FALSE(ps.raw.detections.empty());
  for (const auto& d : ps.raw.detections) CHECK(d.confidence >= 0.5);

  CHECK_THROWS_AS(gen_prediction_sets(p, key, {}, {}, {}, 0.5), std::invalid_argument);
  DetectorParams bad = p;
  bad.head_b[2] = NAN;
  CHECK_THROWS_AS(gen_prediction_sets(bad, key, refs, offsets, flows, 0.5), std::invalid_argument);
}

TEST_CASE("a zeroed head produces no raw survivors") {
  DetectorConfig cfg;
  cfg.depth = 8;
  std::mt19937_64 rng(5);
  DetectorParams p = DetectorParams::initialize(cfg, rng);
  std::fill(p.head_w.begin(), p.head_w.end(), 0.0);
  std::fill(p.head_b.begin(), p.head_b.end(), 0.0);
  const std::vector<Frame> refs = {noise_frame(7), noise_frame(8)};
  const std::vector<int> offsets = {-1, 1};
  const std::vector<CellFlow> flows = {CellFlow::zeros(8), CellFlow::zeros(8)};
  const PredictionSets ps = gen_prediction_sets(p, noise_frame(6), refs, offsets, flows, 0.5);
  CHECK(ps.raw.detections.empty());
  const ConsistencyScores sc = score_consistency(ps.raw, ps.warped);
  CHECK(select(ps.raw, sc, SelectionThresholds{}).empty());
}

TEST_CASE("identical frames with zero flow reproduce the raw predictions") {
  const DetectorParams p = firing_teacher(9);
  const Frame key = noise_frame(10);
  const std::vector<Frame> refs = {key, key};
  const std::vector<int> offsets = {-2, 2};
  const std::vector<CellFlow> flows = {CellFlow::zeros(8), CellFlow::zeros(8)};
  const PredictionSets ps = gen_prediction_sets(p, key, refs, offsets, flows, 0.5);
  REQUIRE_FALSE(ps.raw.detections.empty());
  for (const auto& w : ps.warped) {
    std::vector<Detection> gated = w.detections;
    std::erase_if(gated, [](const Detection& d) { return d.confidence < 0.5; });
    REQUIRE(gated.size() == ps.raw.detections.size());
    for (std::size_t i = 0; i < gated.size(); ++i) {
      CHECK(gated[i].bbox == ps.raw.detections[i].bbox);
      CHECK(gated[i].confidence == doctest::Approx(ps.raw.detections[i].confidence).epsilon(1e-12));
    }
  }
  // perfect consistency: everything lands in p_bbox and p_cls
  const PseudoLabelSet pl = select(ps.raw, score_consistency(ps.raw, ps.warped), SelectionThresholds{});
  CHECK(pl.p_soft.empty());
  CHECK(pl.p_bbox.size() == ps.raw.detections.size());
  CHECK(pl.p_cls.size() == ps.raw.detections.size());
  for (Fate f : pl.fates) CHECK(f == Fate::BboxCls);
}

TEST_CASE("match_objects examples") {
  const std::vector<Detection> raw = {det(0, 0, 10, 10, 0.9), det(30, 30, 40, 40, 0.8)};
  const auto self = match_objects(raw, raw);
  CHECK(*self[0] == 0);
  CHECK(*self[1] == 1);
  for (const auto& m : match_objects(raw, {})) CHECK_FALSE(m.has_value());

  // IoU against [0,0,10,10]: width 3 -> 0.3, width 7 -> 0.7, width 5 -> 0.5
  const std::vector<Detection> a = {det(0, 0, 10, 10, 0.9)};
  const std::vector<Detection> cands = {det(0, 0, 3, 10, 0.5), det(0, 0, 7, 10, 0.5),
                                        det(0, 0, 5, 10, 0.5)};
  CHECK(*match_objects(a, cands)[0] == 1);
  // exact tie keeps the lower index
  const std::vector<Detection> tied = {det(0, 0, 5, 10, 0.5), det(5, 0, 10, 10, 0.5)};
  CHECK(*match_objects(a, tied)[0] == 0);
  // zero overlap everywhere still returns an index
  const std::vector<Detection> far = {det(50, 50, 60, 60, 0.5)};
  CHECK(*match_objects(a, far)[0] == 0);
}

TEST_CASE("match_objects agrees with exhaustive pixel search") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> pos(0, 20), len(1, 12), cnt(1, 6);
  auto pix_iou = [](const BBox& a, const BBox& b) {
    int inter = 0, uni = 0;
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 40; ++x) {
        const bool ia = x >= a.x1() && x < a.x2() && y >= a.y1() && y < a.y2();
        const bool ib = x >= b.x1() && x < b.x2() && y >= b.y1() && y < b.y2();
        inter += ia && ib;
        uni += ia || ib;
      }
    }
    return std::pair{inter, uni};
  };
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Detection> raw, cand;
    const int nr = cnt(rng), nc = cnt(rng);
    for (int i = 0; i < nr + nc; ++i) {
      const int x = pos(rng), y = pos(rng);
      (i < nr ? raw : cand).push_back(det(x, y, x + len(rng), y + len(rng), 0.5));
    }
    const auto m = match_objects(raw, cand);
    for (std::size_t k = 0; k < raw.size(); ++k) {
      // compare fractions exactly by cross multiplication
      std::size_t best = 0;
      auto [bi, bu] = pix_iou(raw[k].bbox, cand[0].bbox);
      for (std::size_t w = 1; w < cand.size(); ++w) {
        const auto [i, u] = pix_iou(raw[k].bbox, cand[w].bbox);
        if (static_cast<long>(i) * bu > static_cast<long>(bi) * u) {
          best = w;
          bi = i;
          bu = u;
        }
      }
      REQUIRE(m[k].has_value());
      REQUIRE(*m[k] == best);
    }
  }
}

TEST_CASE("score_consistency examples") {
  const ClassDist p({0.7, 0.1, 0.1, 0.05, 0.05});
  const PredictionSet raw({det(0, 0, 10, 10, 0.9, p)}, RawSource{});

  const std::vector<PredictionSet> same = {PredictionSet(raw.detections, FlowWarpedSource{-1}),
                                           PredictionSet(raw.detections, FlowWarpedSource{1})};
  const ConsistencyScores s = score_consistency(raw, same);
  CHECK(s.xiou[0] == 1.0);
  CHECK(std::abs(s.xdiv[0]) <= 1e-12);
  REQUIRE(s.matches[0].size() == 2);
  CHECK(s.matches[0][0].offset == -1);
  CHECK(s.matches[0][1].offset == 1);

  // iou 0.8 at one offset and 0.6 at the other
  const std::vector<PredictionSet> two = {
      PredictionSet({det(0, 0, 8, 10, 0.9, p)}, FlowWarpedSource{-1}),
      PredictionSet({det(0, 0, 6, 10, 0.9, p)}, FlowWarpedSource{1})};
  CHECK(score_consistency(raw, two).xiou[0] == doctest::Approx(0.7).epsilon(1e-12));

  // one match with a known KL, one empty set
  const ClassDist q({0.5, 0.2, 0.1, 0.1, 0.1});
  const std::vector<PredictionSet> half = {
      PredictionSet({det(0, 0, 10, 10, 0.9, q)}, FlowWarpedSource{-1}),
      PredictionSet({}, FlowWarpedSource{1})};
  const double kl = kl_divergence(p, q);
  const ConsistencyScores h = score_consistency(raw, half);
  CHECK(h.xdiv[0] == doctest::Approx((kl + kXdivPenalty) / 2).epsilon(1e-12));
  CHECK(h.xiou[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_FALSE(h.matches[0][1].index.has_value());

  // r identical offsets give the single-offset score
  const std::vector<PredictionSet> one = {two[0]};
  const std::vector<PredictionSet> rep = {two[0], two[0], two[0]};
  const ConsistencyScores s1 = score_consistency(raw, one), s3 = score_consistency(raw, rep);
  CHECK(s3.xiou[0] == doctest::Approx(s1.xiou[0]).epsilon(1e-12));
  CHECK(s3.xdiv[0] == doctest::Approx(s1.xdiv[0]).epsilon(1e-12));

  CHECK_THROWS_AS(score_consistency(raw, {}), std::invalid_argument);
  CHECK(score_consistency(PredictionSet{}, one).xiou.empty());
}

TEST_CASE("select examples at the default thresholds") {
  const SelectionThresholds thr;  // 0.8, 0.9, 0.005
  const Scored s = scored({{0.95, 0.95, 0.001}, {0.85, 0.4, 0.3}, {0.6, 0.4, 0.3}});
  const PseudoLabelSet pl = select(s.raw, s.scores, thr);
  REQUIRE(pl.fates.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const double conf = pl.survivors[k].confidence;
    if (conf == 0.95) CHECK(pl.fates[k] == Fate::BboxCls);
    if (conf == 0.85) CHECK(pl.fates[k] == Fate::Soft);
    if (conf == 0.6) CHECK(pl.fates[k] == Fate::Discarded);
  }
  CHECK(pl.p_bbox.size() == 1);
  CHECK(pl.p_cls.size() == 1);
  CHECK(pl.p_cls[0].class_id == 0);
  REQUIRE(pl.p_soft.size() == 1);
  CHECK(pl.p_soft[0].box == BBox(10, 0, 15, 5));
  CHECK(pl.p_soft[0].dist == pl.survivors[1].class_dist);
  REQUIRE(pl.discarded.size() == 1);
  CHECK(pl.discarded[0].confidence == 0.6);

  CHECK(to_string(Fate::BboxCls) == "bbox+cls");
  CHECK(to_string(Fate::Discarded) == "discarded");

  ConsistencyScores short_scores = s.scores;
  short_scores.xiou.pop_back();
  CHECK_THROWS_AS(select(s.raw, short_scores, thr), std::invalid_argument);
}

TEST_CASE("confidence-only selection gates boxes and classes together") {
  const Scored s = scored({{0.95, 0.1, 5.0}, {0.7, 1.0, 0.0}});
  const PseudoLabelSet pl = select(s.raw, s.scores, SelectionThresholds{}, SelectionMode::ConfidenceOnly);
  REQUIRE(pl.p_bbox.size() == 1);
  CHECK(pl.p_bbox[0] == BBox(0, 0, 5, 5));
  CHECK(pl.p_cls.size() == 1);
  CHECK(pl.p_soft.empty());
}

TEST_CASE("select partitions and is monotone in the thresholds") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0), div(0.0, 0.02);
  std::uniform_int_distribution<int> cnt(0, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::array<double, 3>> rows(static_cast<std::size_t>(cnt(rng)));
    for (auto& r : rows) {
      // coarse grid so equalities with the thresholds come up
      r = {0.5 + std::round(u(rng) * 10) / 20, std::round(u(rng) * 20) / 20,
           u(rng) < 0.3 ? kXdivPenalty : std::round(div(rng) * 1000) / 1000};
    }
    const Scored s = scored(rows);
    SelectionThresholds a;
    a.gamma_c = 0.55 + 0.4 * u(rng);
    a.zeta_iou = 0.05 + 0.9 * u(rng);
    a.eta_div = 0.001 + 0.015 * u(rng);
    const PseudoLabelSet pa = select(s.raw, s.scores, a);

    REQUIRE(pa.survivors.size() == rows.size());
    std::size_t discarded = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const bool b = s.scores.xiou[k] > a.zeta_iou;
      const bool c = s.scores.xdiv[k] < a.eta_div;
      const bool soft = pa.fates[k] == Fate::Soft;
      // soft never overlaps box or class membership
      if (soft) REQUIRE((!b && !c));
      REQUIRE((pa.fates[k] == Fate::BboxCls) == (b && c));
      REQUIRE((pa.fates[k] == Fate::Bbox) == (b && !c));
      REQUIRE((pa.fates[k] == Fate::Cls) == (!b && c));
      discarded += pa.fates[k] == Fate::Discarded;
    }
    REQUIRE(pa.discarded.size() == discarded);
    for (const auto& sl : pa.p_soft) {
      REQUIRE_FALSE(contains(pa.p_bbox, sl.box));
      for (const auto& h : pa.p_cls) REQUIRE_FALSE(h.box == sl.box);
    }

    SelectionThresholds b = a;
    b.zeta_iou = std::min(0.99, a.zeta_iou + 0.3 * u(rng));
    b.eta_div = a.eta_div * u(rng) + 1e-6;
    b.gamma_c = std::min(0.99, a.gamma_c + 0.3 * u(rng));
    const PseudoLabelSet pz = select(s.raw, s.scores, SelectionThresholds{a.tau_init, a.gamma_c, b.zeta_iou, a.eta_div});
    const PseudoLabelSet pe = select(s.raw, s.scores, SelectionThresholds{a.tau_init, a.gamma_c, a.zeta_iou, b.eta_div});
    const PseudoLabelSet pg = select(s.raw, s.scores, SelectionThresholds{a.tau_init, b.gamma_c, a.zeta_iou, a.eta_div});
    for (const auto& box : pz.p_bbox) REQUIRE(contains(pa.p_bbox, box));
    for (const auto& h : pe.p_cls) {
      REQUIRE(std::any_of(pa.p_cls.begin(), pa.p_cls.end(), [&](const HardLabel& x) { return x.box == h.box; }));
    }
    for (const auto& sl : pg.p_soft) {
      REQUIRE(std::any_of(pa.p_soft.begin(), pa.p_soft.end(), [&](const SoftLabel& x) { return x.box == sl.box; }));
    }
  }
}

TEST_CASE("pseudo_quality examples") {
  const std::vector<Annotation> gt = {{1, BBox(0, 0, 10, 10), 0}, {2, BBox(30, 30, 40, 40), 1}};
  PseudoLabelSet exact;
  for (const auto& a : gt) {
    exact.p_bbox.push_back(a.bbox);
    exact.p_cls.push_back({a.bbox, a.class_id});
  }
  const PseudoQuality q = pseudo_quality(exact, gt, 5);
  CHECK(q.map50 == doctest::Approx(1.0));
  CHECK(q.bbox_precision == 1.0);
  CHECK(q.bbox_recall == 1.0);
  CHECK(q.cls_accuracy == 1.0);

  const PseudoQuality e = pseudo_quality(PseudoLabelSet{}, gt, 5);
  CHECK(e.bbox_recall == 0.0);
  CHECK(e.bbox_precision == 0.0);
  CHECK(e.map50 == 0.0);

  PseudoLabelSet half;
  half.p_bbox = {BBox(0, 0, 10, 10), BBox(50, 0, 60, 10)};
  const PseudoQuality h = pseudo_quality(half, gt, 5);
  CHECK(h.bbox_precision == 0.5);
  CHECK(h.bbox_recall == 0.5);
  CHECK(h.num_bbox == 2);
  CHECK(h.num_gt == 2);

  PseudoLabelSet wrong;
  wrong.p_cls = {{BBox(0, 0, 10, 10), 3}};
  CHECK(pseudo_quality(wrong, gt, 5).cls_accuracy == 0.0);

  const std::vector<PseudoLabelSet> two = {exact, exact};
  const std::vector<std::vector<Annotation>> one_gt = {gt};
  CHECK_THROWS_AS(pseudo_quality(two, one_gt, 5), std::invalid_argument);
}
