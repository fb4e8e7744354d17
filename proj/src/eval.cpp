// SPDX-License-Identifier: Apache-2.0

#include "ssvod/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ssvod {

namespace {

using GtFilter = std::function<bool(std::size_t image, std::size_t gt)>;

enum class Outcome { TruePositive, FalsePositive, Ignored };

struct ScoredDet {
  double confidence;
  Outcome outcome;
};

// Greedy matching of class_id detections by descending confidence. Ties keep
// image order, then detection order.
std::vector<ScoredDet> match_class(std::span<const ImageEval> images, double iou_thresh,
                                   int class_id, const GtFilter& active, int& num_active) {
  struct Ref {
    double conf;
    std::size_t image;
    std::size_t det;
  };
  std::vector<Ref> order;
  num_active = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t d = 0; d < images[i].dets.size(); ++d) {
      if (images[i].dets[d].hard_class == class_id) {
        order.push_back({images[i].dets[d].confidence, i, d});
      }
    }
    for (std::size_t g = 0; g < images[i].gts.size(); ++g) {
      if (images[i].gts[g].class_id == class_id && active(i, g)) ++num_active;
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Ref& a, const Ref& b) { return a.conf > b.conf; });

  std::vector<std::vector<char>> used(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].gts.size(), 0);

  std::vector<ScoredDet> out;
  out.reserve(order.size());
  for (const auto& r : order) {
    const auto& img = images[r.image];
    const BBox& box = img.dets[r.det].bbox;
    double best = -1.0;
    std::size_t best_g = 0;
    bool overlaps_inactive = false;
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      if (img.gts[g].class_id != class_id) continue;
      const double ov = iou(box, img.gts[g].bbox);
      if (ov < iou_thresh) continue;
      if (!active(r.image, g)) {
        overlaps_inactive = true;
        continue;
      }
      if (used[r.image][g]) continue;
      if (ov > best) {
        best = ov;
        best_g = g;
      }
    }
    if (best >= 0.0) {
      used[r.image][best_g] = 1;
      out.push_back({r.conf, Outcome::TruePositive});
    } else if (overlaps_inactive) {
      out.push_back({r.conf, Outcome::Ignored});
    } else {
      out.push_back({r.conf, Outcome::FalsePositive});
    }
  }
  return out;
}

std::vector<PrPoint> curve_from_matches(const std::vector<ScoredDet>& m, int num_pos) {
  std::vector<PrPoint> curve;
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].outcome == Outcome::TruePositive) ++tp;
    if (m[i].outcome == Outcome::FalsePositive) ++fp;
    const bool group_end = i + 1 == m.size() || m[i + 1].confidence != m[i].confidence;
    if (group_end && tp + fp > 0) {
      curve.push_back({m[i].confidence, static_cast<double>(tp) / num_pos,
                       static_cast<double>(tp) / (tp + fp)});
    }
  }
  return curve;
}

double area_under(const std::vector<PrPoint>& curve) {
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    double pmax = 0.0;
    for (std::size_t j = i; j < curve.size(); ++j) pmax = std::max(pmax, curve[j].precision);
    ap += (curve[i].recall - prev_recall) * pmax;
    prev_recall = curve[i].recall;
  }
  return std::clamp(ap, 0.0, 1.0);
}

std::optional<double> filtered_ap(std::span<const ImageEval> images, double iou_thresh,
                                  int class_id, const GtFilter& active) {
  int num_pos = 0;
  const auto m = match_class(images, iou_thresh, class_id, active, num_pos);
  if (num_pos == 0) return std::nullopt;
  return area_under(curve_from_matches(m, num_pos));
}

// Mean AP over classes that have active gts; nullopt when none do.
std::optional<double> filtered_map(std::span<const ImageEval> images, double iou_thresh,
                                   int classes, const GtFilter& active) {
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < classes; ++c) {
    if (auto ap = filtered_ap(images, iou_thresh, c, active)) {
      sum += *ap;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

const GtFilter kAllGts = [](std::size_t, std::size_t) { return true; };

}  // namespace

std::vector<PrPoint> pr_curve(std::span<const ImageEval> images, double iou_thresh,
                              int class_id) {
  int num_pos = 0;
  const auto m = match_class(images, iou_thresh, class_id, kAllGts, num_pos);
  if (num_pos == 0) return {};
  return curve_from_matches(m, num_pos);
}

std::optional<double> average_precision(std::span<const ImageEval> images,
                                        double iou_thresh, int class_id) {
  return filtered_ap(images, iou_thresh, class_id, kAllGts);
}

std::optional<double> average_precision(std::span<const Detection> dets,
                                        std::span<const Annotation> gts,
                                        double iou_thresh, int class_id) {
  ImageEval img{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}, {}};
  return average_precision(std::span<const ImageEval>(&img, 1), iou_thresh, class_id);
}

double mean_average_precision(std::span<const ImageEval> images, double iou_thresh,
                              int classes) {
  return filtered_map(images, iou_thresh, classes, kAllGts).value_or(0.0);
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back((50.0 + 5.0 * k) / 100.0);
  return t;
}

double map_range(std::span<const ImageEval> images, int classes) {
  double sum = 0.0;
  const auto ts = coco_iou_thresholds();
  for (double t : ts) sum += mean_average_precision(images, t, classes);
  return sum / static_cast<double>(ts.size());
}

SizeClass size_class(const BBox& box, double frame_w, double frame_h) {
  const double frac = box.area() / (frame_w * frame_h);
  if (frac < 0.02) return SizeClass::Small;
  if (frac > 0.10) return SizeClass::Large;
  return SizeClass::Middle;
}

MotionClass motion_class(double miou) {
  if (miou > 0.9) return MotionClass::Slow;
  if (miou < 0.7) return MotionClass::Fast;
  return MotionClass::Medium;
}

std::string to_string(SizeClass s) {
  switch (s) {
    case SizeClass::Small: return "small";
    case SizeClass::Middle: return "middle";
    case SizeClass::Large: return "large";
  }
  return "?";
}

std::string to_string(MotionClass m) {
  switch (m) {
    case MotionClass::Slow: return "slow";
    case MotionClass::Medium: return "medium";
    case MotionClass::Fast: return "fast";
  }
  return "?";
}

double motion_iou(const ObjectTrack& track, int t) {
  const int n = static_cast<int>(track.boxes.size());
  if (t < 0 || t >= n) throw std::out_of_range("motion_iou: frame out of range");
  double sum = 0.0;
  int k = 0;
  for (int nb : {t - 1, t + 1}) {
    if (nb < 0 || nb >= n) continue;
    sum += iou(track.boxes[static_cast<std::size_t>(t)], track.boxes[static_cast<std::size_t>(nb)]);
    ++k;
  }
  return k == 0 ? 1.0 : sum / k;
}

Breakdown breakdown(std::span<const ImageEval> images, int classes, double frame_w,
                    double frame_h) {
  for (const auto& img : images) {
    if (img.gt_motion_iou.size() != img.gts.size()) {
      throw std::invalid_argument("breakdown: missing motion truth");
    }
  }
  auto category_report = [&](const std::string& name, const GtFilter& active) {
    CategoryReport r;
    r.name = name;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (std::size_t g = 0; g < images[i].gts.size(); ++g) r.num_gt += active(i, g) ? 1 : 0;
    }
    r.map50 = filtered_map(images, 0.5, classes, active).value_or(0.0);
    double sum = 0.0;
    const auto ts = coco_iou_thresholds();
    for (double t : ts) sum += filtered_map(images, t, classes, active).value_or(0.0);
    r.map_range = sum / static_cast<double>(ts.size());
    return r;
  };
  Breakdown b;
  for (SizeClass s : {SizeClass::Small, SizeClass::Middle, SizeClass::Large}) {
    b.size.push_back(category_report(to_string(s), [&, s](std::size_t i, std::size_t g) {
      return size_class(images[i].gts[g].bbox, frame_w, frame_h) == s;
    }));
  }
  for (MotionClass m : {MotionClass::Slow, MotionClass::Medium, MotionClass::Fast}) {
    b.motion.push_back(category_report(to_string(m), [&, m](std::size_t i, std::size_t g) {
      return motion_class(images[i].gt_motion_iou[g]) == m;
    }));
  }
  return b;
}

std::vector<std::vector<int>> confusion_matrix(std::span<const ImageEval> images,
                                               int classes, double iou_thresh,
                                               double conf_thresh) {
  std::vector<std::vector<int>> m(static_cast<std::size_t>(classes),
                                  std::vector<int>(static_cast<std::size_t>(classes + 1), 0));
  for (const auto& img : images) {
    for (const auto& gt : img.gts) {
      if (gt.class_id < 0 || gt.class_id >= classes) {
        throw std::invalid_argument("confusion_matrix: gt class out of range");
      }
      double best = -1.0;
      int best_cls = -1;
      for (const auto& d : img.dets) {
        if (d.confidence < conf_thresh) continue;
        const double ov = iou(d.bbox, gt.bbox);
        if (ov >= iou_thresh && ov > best) {
          best = ov;
          best_cls = d.hard_class;
        }
      }
      auto& row = m[static_cast<std::size_t>(gt.class_id)];
      if (best_cls >= 0) {
        ++row[static_cast<std::size_t>(best_cls)];
      } else {
        ++row[static_cast<std::size_t>(classes)];
      }
    }
  }
  return m;
}

EvalReport evaluate_detections(std::span<const ImageEval> images, int classes,
                               double frame_w, double frame_h) {
  EvalReport r;
  r.images = static_cast<int>(images.size());
  r.thresholds = coco_iou_thresholds();
  for (int c = 0; c < classes; ++c) {
    ClassAp ca;
    ca.class_id = c;
    for (const auto& img : images) {
      ca.num_gt += static_cast<int>(std::count_if(
          img.gts.begin(), img.gts.end(), [c](const Annotation& a) { return a.class_id == c; }));
    }
    if (ca.num_gt > 0) {
      for (double t : r.thresholds) ca.ap.push_back(*average_precision(images, t, c));
    }
    r.per_class.push_back(std::move(ca));
  }
  auto mean_at = [&](std::size_t ti) {
    double s = 0.0;
    int n = 0;
    for (const auto& ca : r.per_class) {
      if (ca.num_gt == 0) continue;
      s += ca.ap[ti];
      ++n;
    }
    return n == 0 ? 0.0 : s / n;
  };
  r.map50 = mean_at(0);
  r.map75 = mean_at(5);
  double s = 0.0;
  for (std::size_t ti = 0; ti < r.thresholds.size(); ++ti) s += mean_at(ti);
  r.map_range = s / static_cast<double>(r.thresholds.size());
  const bool have_motion = std::all_of(images.begin(), images.end(), [](const ImageEval& img) {
    return img.gt_motion_iou.size() == img.gts.size();
  });
  if (have_motion) r.breakdown = breakdown(images, classes, frame_w, frame_h);
  r.confusion = confusion_matrix(images, classes);
  return r;
}

namespace {

nlohmann::json category_json(const std::vector<CategoryReport>& cats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& c : cats) {
    j[c.name] = {{"num_gt", c.num_gt}, {"mAP@0.5", c.map50}, {"mAP@0.5:0.95", c.map_range}};
  }
  return j;
}

std::vector<CategoryReport> category_from_json(const nlohmann::json& j,
                                               std::initializer_list<const char*> names) {
  std::vector<CategoryReport> out;
  for (const char* n : names) {
    if (!j.contains(n)) continue;
    const auto& e = j.at(n);
    out.push_back({n, e.at("num_gt").get<int>(), e.at("mAP@0.5").get<double>(),
                   e.at("mAP@0.5:0.95").get<double>()});
  }
  return out;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["images"] = r.images;
  j["mAP@0.5"] = r.map50;
  j["mAP@0.75"] = r.map75;
  j["mAP@0.5:0.95"] = r.map_range;
  j["iou_thresholds"] = r.thresholds;
  auto pc = nlohmann::ordered_json::array();
  for (const auto& ca : r.per_class) {
    pc.push_back({{"class", ca.class_id}, {"num_gt", ca.num_gt}, {"ap", ca.ap}});
  }
  j["per_class"] = pc;
  j["size"] = category_json(r.breakdown.size);
  j["motion"] = category_json(r.breakdown.motion);
  j["confusion"] = r.confusion;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.images = j.at("images").get<int>();
  r.map50 = j.at("mAP@0.5").get<double>();
  r.map75 = j.at("mAP@0.75").get<double>();
  r.map_range = j.at("mAP@0.5:0.95").get<double>();
  r.thresholds = j.at("iou_thresholds").get<std::vector<double>>();
  for (const auto& e : j.at("per_class")) {
    r.per_class.push_back({e.at("class").get<int>(), e.at("num_gt").get<int>(),
                           e.at("ap").get<std::vector<double>>()});
  }
  r.breakdown.size = category_from_json(j.at("size"), {"small", "middle", "large"});
  r.breakdown.motion = category_from_json(j.at("motion"), {"slow", "medium", "fast"});
  r.confusion = j.at("confusion").get<std::vector<std::vector<int>>>();
  return r;
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "class,num_gt,ap50,ap75,ap50_95\n";
  for (const auto& ca : r.per_class) {
    os << ca.class_id << "," << ca.num_gt << ",";
    if (ca.ap.empty()) {
      os << ",,\n";
      continue;
    }
    const double range = std::accumulate(ca.ap.begin(), ca.ap.end(), 0.0) /
                         static_cast<double>(ca.ap.size());
    os << ca.ap[0] << "," << ca.ap[5] << "," << range << "\n";
  }
  return os.str();
}

std::string pr_curve_csv(std::span<const PrPoint> curve) {
  std::ostringstream os;
  os.precision(10);
  os << "confidence,recall,precision\n";
  for (const auto& p : curve) os << p.confidence << "," << p.recall << "," << p.precision << "\n";
  return os.str();
}

}  // namespace ssvod
