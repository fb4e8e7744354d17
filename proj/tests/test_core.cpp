// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "ssvod/core.hpp"

using namespace ssvod;

namespace {

// Counts unit pixels covered by both / either integer box.
double pixel_iou(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2) {
  int inter = 0, uni = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      inter += a && b;
      uni += a || b;
    }
  }
  return static_cast<double>(inter) / uni;
}

Detection det(double x1, double y1, double x2, double y2, double conf) {
  return Detection(BBox(x1, y1, x2, y2), ClassDist::uniform(3), conf);
}

}  // namespace

TEST_CASE("BBox rejects empty and non-finite boxes") {
  CHECK_THROWS_AS(BBox(0, 0, 0, 5), std::invalid_argument);
  CHECK_THROWS_AS(BBox(0, 5, 3, 2), std::invalid_argument);
  CHECK_THROWS_AS(BBox(0, 0, NAN, 5), std::invalid_argument);
  const BBox b(1, 2, 5, 10);
  CHECK(b.area() == 32.0);
  CHECK(b.center_x() == 3.0);
  CHECK(b.translated(2, -1) == BBox(3, 1, 7, 9));
}

TEST_CASE("iou examples") {
  const BBox a(0, 0, 10, 10);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BBox(20, 20, 30, 30)) == 0.0);
  CHECK(iou(a, BBox(5, 5, 15, 15)) == doctest::Approx(25.0 / 175.0).epsilon(1e-12));
}

TEST_CASE("iou matches pixel counting on random integer boxes") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pos(0, 31), len(1, 32);
  for (int i = 0; i < 1000; ++i) {
    const int ax = pos(rng), ay = pos(rng), aw = len(rng), ah = len(rng);
    const int bx = pos(rng), by = pos(rng), bw = len(rng), bh = len(rng);
    const BBox a(ax, ay, ax + aw, ay + ah), b(bx, by, bx + bw, by + bh);
    const double oracle = pixel_iou(ax, ay, ax + aw, ay + ah, bx, by, bx + bw, by + bh);
    REQUIRE(iou(a, b) == doctest::Approx(oracle).epsilon(1e-12));
    REQUIRE(iou(a, b) == iou(b, a));
  }
}

TEST_CASE("iou bounds and symmetry on random real boxes") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-20, 80), l(0.01, 40);
  for (int i = 0; i < 2000; ++i) {
    const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
    const BBox a(ax, ay, ax + l(rng), ay + l(rng)), b(bx, by, bx + l(rng), by + l(rng));
    const double v = iou(a, b);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    REQUIRE(v == iou(b, a));
    REQUIRE(iou(a, a) == 1.0);
  }
}

TEST_CASE("ClassDist validation and helpers") {
  CHECK_THROWS_AS(ClassDist({0.5, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(ClassDist({1.2, -0.2}), std::invalid_argument);
  CHECK_THROWS_AS(ClassDist({}), std::invalid_argument);
  const ClassDist u = ClassDist::uniform(4);
  CHECK(u[2] == doctest::Approx(0.25));
  const std::vector<double> logits = {1000.0, 0.0, 1000.0};
  const ClassDist s = ClassDist::from_logits(logits);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s.argmax() == 0);  // first of the tied maxima
  const Detection d(BBox(0, 0, 1, 1), ClassDist({0.2, 0.7, 0.1}), 0.4);
  CHECK(d.hard_class == 1);
  CHECK_THROWS_AS(Detection(BBox(0, 0, 1, 1), ClassDist({1.0}), 1.5), std::invalid_argument);
}

TEST_CASE("kl_divergence closed forms") {
  CHECK(std::abs(kl_divergence(ClassDist({0.5, 0.5}), ClassDist({0.5, 0.5}))) <= 1e-9);
  CHECK(kl_divergence(ClassDist({1.0, 0.0}), ClassDist({0.5, 0.5})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(kl_divergence(ClassDist({0.9, 0.1}), ClassDist({0.1, 0.9})) ==
        doctest::Approx(0.9 * std::log(9.0) + 0.1 * std::log(1.0 / 9.0)).epsilon(1e-6));
  CHECK_THROWS_AS(kl_divergence(ClassDist({1.0}), ClassDist({0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("kl_divergence properties on random distributions") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(5), q(5);
    double sp = 0, sq = 0;
    for (int k = 0; k < 5; ++k) {
      p[k] = u(rng) < 0.2 ? 0.0 : u(rng);
      q[k] = u(rng) < 0.2 ? 0.0 : u(rng);
      sp += p[k];
      sq += q[k];
    }
    if (sp == 0 || sq == 0) continue;
    for (int k = 0; k < 5; ++k) {
      p[k] /= sp;
      q[k] /= sq;
    }
    const ClassDist P(p), Q(q);
    REQUIRE(kl_divergence(P, P) <= 1e-9);
    REQUIRE(kl_divergence(P, Q) >= -1e-6);
  }
}

TEST_CASE("nms examples") {
  CHECK(nms({}, 0.5).empty());
  // iou([0,0,10,10],[0,0,10,9]) = 0.9
  auto out = nms({det(0, 0, 10, 9, 0.8), det(0, 0, 10, 10, 0.9)}, 0.5);
  REQUIRE(out.size() == 1);
  CHECK(out[0].confidence == 0.9);
  out = nms({det(0, 0, 10, 10, 0.9), det(20, 20, 30, 30, 0.8)}, 0.5);
  REQUIRE(out.size() == 2);
  CHECK(out[0].confidence == 0.9);
  CHECK(out[1].confidence == 0.8);
  CHECK_THROWS_AS(nms({}, 0.0), std::invalid_argument);
}

TEST_CASE("nms ties keep the earlier index") {
  auto out = nms({det(0, 0, 10, 10, 0.5), det(1, 0, 11, 10, 0.5)}, 0.5);
  REQUIRE(out.size() == 1);
  CHECK(out[0].bbox.x1() == 0.0);
}

TEST_CASE("nms is idempotent and leaves no overlapping survivors") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(0, 50), len(2, 20), c(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> d;
    const int n = 1 + trial % 12;
    for (int i = 0; i < n; ++i) {
      const double x = pos(rng), y = pos(rng);
      d.push_back(det(x, y, x + len(rng), y + len(rng), std::round(c(rng) * 10) / 10));
    }
    const auto once = nms(d, 0.5);
    REQUIRE(nms(once, 0.5) == once);
    for (std::size_t i = 0; i < once.size(); ++i) {
      if (i > 0) REQUIRE(once[i - 1].confidence >= once[i].confidence);
      for (std::size_t j = i + 1; j < once.size(); ++j) REQUIRE(iou(once[i].bbox, once[j].bbox) <= 0.5);
    }
  }
}

TEST_CASE("clip_box examples") {
  CHECK(*clip_box(BBox(-5, -5, 10, 10), 64, 64) == BBox(0, 0, 10, 10));
  CHECK(*clip_box(BBox(10, 10, 20, 20), 64, 64) == BBox(10, 10, 20, 20));
  CHECK_FALSE(clip_box(BBox(70, 70, 90, 90), 64, 64).has_value());
}

TEST_CASE("PredictionSet sorts by descending confidence") {
  PredictionSet s({det(0, 0, 1, 1, 0.2), det(0, 0, 2, 2, 0.7), det(0, 0, 3, 3, 0.5)},
                  FlowWarpedSource{-3});
  CHECK(s.detections[0].confidence == 0.7);
  CHECK(s.detections[2].confidence == 0.2);
  CHECK(std::get<FlowWarpedSource>(s.source).offset == -3);
}
