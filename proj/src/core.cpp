// SPDX-License-Identifier: Apache-2.0

#include "ssvod/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ssvod {

BBox::BBox(double x1, double y1, double x2, double y2)
    : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
  if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) ||
      !std::isfinite(y2)) {
    throw std::invalid_argument("BBox: non-finite coordinate");
  }
  if (!(x2 > x1) || !(y2 > y1)) {
    throw std::invalid_argument("BBox: empty box [" + std::to_string(x1) + "," +
                                std::to_string(y1) + "," + std::to_string(x2) +
                                "," + std::to_string(y2) + "]");
  }
}

BBox BBox::translated(double dx, double dy) const {
  return BBox(x1_ + dx, y1_ + dy, x2_ + dx, y2_ + dy);
}

ClassDist::ClassDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw std::invalid_argument("ClassDist: empty");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("ClassDist: negative or non-finite entry");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw std::invalid_argument("ClassDist: entries sum to " +
                                std::to_string(sum));
  }
}

ClassDist ClassDist::uniform(std::size_t classes) {
  return ClassDist(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
}

ClassDist ClassDist::from_logits(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("ClassDist: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return ClassDist(std::move(p));
}

std::size_t ClassDist::argmax() const {
  return static_cast<std::size_t>(
      std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

Detection::Detection(BBox box, ClassDist dist, double conf)
    : bbox(box),
      class_dist(std::move(dist)),
      confidence(conf),
      hard_class(static_cast<int>(class_dist.argmax())) {
  if (!(conf >= 0.0 && conf <= 1.0)) {
    throw std::invalid_argument("Detection: confidence outside [0,1]");
  }
}

PredictionSet::PredictionSet(std::vector<Detection> dets, PredictionSource src)
    : detections(std::move(dets)), source(src) {
  sort_by_confidence(detections);
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  // a.area() + b.area() is commutative, so the result is exactly symmetric.
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double kl_divergence(const ClassDist& p, const ClassDist& q, double eps) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch (" +
                                std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()) + ")");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    kl += p[i] * std::log((p[i] + eps) / (q[i] + eps));
  }
  return kl;
}

void sort_by_confidence(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.confidence > b.confidence;
                   });
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh <= 1.0)) {
    throw std::invalid_argument("nms: iou_thresh must be in (0,1]");
  }
  sort_by_confidence(dets);
  std::vector<Detection> keep;
  keep.reserve(dets.size());
  for (auto& d : dets) {
    const bool suppressed =
        std::any_of(keep.begin(), keep.end(), [&](const Detection& k) {
          return iou(k.bbox, d.bbox) > iou_thresh;
        });
    if (!suppressed) keep.push_back(std::move(d));
  }
  return keep;
}

std::optional<BBox> clip_box(const BBox& b, double width, double height) {
  if (!(width > 0.0 && height > 0.0)) {
    throw std::invalid_argument("clip_box: frame size must be positive");
  }
  const double x1 = std::clamp(b.x1(), 0.0, width);
  const double y1 = std::clamp(b.y1(), 0.0, height);
  const double x2 = std::clamp(b.x2(), 0.0, width);
  const double y2 = std::clamp(b.y2(), 0.0, height);
  if (!(x2 > x1) || !(y2 > y1)) return std::nullopt;
  return BBox(x1, y1, x2, y2);
}

}  // namespace ssvod
