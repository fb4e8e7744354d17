// SPDX-License-Identifier: Apache-2.0

#include "ssvod/pseudo.hpp"

#include <algorithm>
#include <stdexcept>

#include "ssvod/eval.hpp"

namespace ssvod {

void SelectionThresholds::validate() const {
  auto open01 = [](double v) { return v > 0.0 && v < 1.0; };
  if (!open01(tau_init)) throw std::invalid_argument("SelectionThresholds: tau_init must be in (0,1)");
  if (!open01(gamma_c)) throw std::invalid_argument("SelectionThresholds: gamma_c must be in (0,1)");
  if (!open01(zeta_iou)) throw std::invalid_argument("SelectionThresholds: zeta_iou must be in (0,1)");
  if (!(eta_div > 0.0)) throw std::invalid_argument("SelectionThresholds: eta_div must be > 0");
}

PredictionSets gen_prediction_sets(const DetectorParams& teacher, const Frame& key,
                                   std::span<const Frame> refs, std::span<const int> offsets,
                                   std::span<const CellFlow> flows, double tau_init) {
  if (refs.empty()) {
    throw std::invalid_argument("gen_prediction_sets: at least one reference frame is required");
  }
  if (!teacher.all_finite()) throw std::invalid_argument("gen_prediction_sets: non-finite teacher");
  const FeatureMap key_fm = extract_features(key, teacher);
  std::vector<FeatureMap> ref_fms;
  ref_fms.reserve(refs.size());
  for (const auto& r : refs) ref_fms.push_back(extract_features(r, teacher));
  const FeatureSets sets = build_feature_sets(key_fm, ref_fms, offsets, flows);

  PredictionSets out;
  std::vector<Detection> raw = forward(sets.raw, teacher).detections;
  std::erase_if(raw, [&](const Detection& d) { return d.confidence < tau_init; });
  out.raw = PredictionSet(std::move(raw), RawSource{});
  for (const auto& s : sets.warped) {
    out.warped.emplace_back(forward(s, teacher).detections, s.source);
  }
  return out;
}

std::vector<std::optional<std::size_t>> match_objects(std::span<const Detection> raw,
                                                      std::span<const Detection> candidates) {
  std::vector<std::optional<std::size_t>> out(raw.size());
  if (candidates.empty()) return out;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    std::size_t best = 0;
    double best_iou = iou(raw[k].bbox, candidates[0].bbox);
    for (std::size_t w = 1; w < candidates.size(); ++w) {
      const double v = iou(raw[k].bbox, candidates[w].bbox);
      if (v > best_iou) {
        best_iou = v;
        best = w;
      }
    }
    out[k] = best;
  }
  return out;
}

ConsistencyScores score_consistency(const PredictionSet& raw,
                                    std::span<const PredictionSet> warped) {
  if (warped.empty()) {
    throw std::invalid_argument("score_consistency: no flow-warped prediction sets");
  }
  const std::size_t n = raw.detections.size();
  ConsistencyScores s;
  s.xiou.assign(n, 0.0);
  s.xdiv.assign(n, 0.0);
  s.matches.assign(n, {});
  for (const auto& fw : warped) {
    const int offset =
        std::holds_alternative<FlowWarpedSource>(fw.source) ? std::get<FlowWarpedSource>(fw.source).offset : 0;
    const auto m = match_objects(raw.detections, fw.detections);
    for (std::size_t k = 0; k < n; ++k) {
      Match mt;
      mt.offset = offset;
      mt.index = m[k];
      if (m[k]) {
        const Detection& o = fw.detections[*m[k]];
        mt.iou = iou(raw.detections[k].bbox, o.bbox);
        mt.kl = kl_divergence(raw.detections[k].class_dist, o.class_dist);
      }
      s.xiou[k] += mt.iou;
      s.xdiv[k] += mt.kl;
      s.matches[k].push_back(mt);
    }
  }
  const double r = static_cast<double>(warped.size());
  for (std::size_t k = 0; k < n; ++k) {
    s.xiou[k] /= r;
    s.xdiv[k] /= r;
  }
  return s;
}

std::string to_string(Fate f) {
  switch (f) {
    case Fate::Bbox: return "bbox";
    case Fate::Cls: return "cls";
    case Fate::Soft: return "soft";
    case Fate::BboxCls: return "bbox+cls";
    case Fate::Discarded: return "discarded";
  }
  return "discarded";
}

PseudoLabelSet select(const PredictionSet& raw, const ConsistencyScores& scores,
                      const SelectionThresholds& thr, SelectionMode mode) {
  thr.validate();
  const std::size_t n = raw.detections.size();
  if (scores.xiou.size() != n || scores.xdiv.size() != n) {
    throw std::invalid_argument("select: scores do not cover every raw detection");
  }
  PseudoLabelSet out;
  out.scores = scores;
  for (std::size_t k = 0; k < n; ++k) {
    const Detection& d = raw.detections[k];
    bool in_bbox = false, in_cls = false, in_soft = false;
    if (mode == SelectionMode::ThreeStage) {
      in_bbox = scores.xiou[k] > thr.zeta_iou;
      in_cls = scores.xdiv[k] < thr.eta_div;
      in_soft = d.confidence > thr.gamma_c && scores.xdiv[k] > thr.eta_div &&
                scores.xiou[k] < thr.zeta_iou;
    } else {
      in_bbox = in_cls = d.confidence > thr.gamma_c;
    }
    if (in_bbox) out.p_bbox.push_back(d.bbox);
    if (in_cls) out.p_cls.push_back({d.bbox, d.hard_class});
    if (in_soft) out.p_soft.push_back({d.bbox, d.class_dist});
    Fate f = Fate::Discarded;
    if (in_bbox && in_cls) f = Fate::BboxCls;
    else if (in_bbox) f = Fate::Bbox;
    else if (in_cls) f = Fate::Cls;
    else if (in_soft) f = Fate::Soft;
    else out.discarded.push_back(d);
    out.survivors.push_back(d);
    out.fates.push_back(f);
  }
  return out;
}

namespace {

ClassDist one_hot(int c, int classes) {
  std::vector<double> p(static_cast<std::size_t>(classes), 0.0);
  p[static_cast<std::size_t>(c)] = 1.0;
  return ClassDist(std::move(p));
}

// Greedy class-agnostic matching of boxes to gts at IoU >= 0.5, in list order.
// Returns the matched gt index per box.
std::vector<std::optional<std::size_t>> greedy_match(const std::vector<BBox>& boxes,
                                                     std::span<const Annotation> gt) {
  std::vector<std::optional<std::size_t>> out(boxes.size());
  std::vector<char> used(gt.size(), 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    double best = 0.5;
    std::optional<std::size_t> arg;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g]) continue;
      const double v = iou(boxes[i], gt[g].bbox);
      if (v >= best && (!arg || v > best)) {
        best = v;
        arg = g;
      }
    }
    if (arg) {
      used[*arg] = 1;
      out[i] = arg;
    }
  }
  return out;
}

}  // namespace

PseudoQuality pseudo_quality(std::span<const PseudoLabelSet> pseudo,
                             std::span<const std::vector<Annotation>> gt, int classes) {
  if (pseudo.size() != gt.size()) {
    throw std::invalid_argument("pseudo_quality: frame count mismatch");
  }
  PseudoQuality q;
  std::vector<ImageEval> images;
  int bbox_tp = 0, cls_hit = 0, cls_correct = 0;
  for (std::size_t f = 0; f < pseudo.size(); ++f) {
    const auto& ps = pseudo[f];
    const auto& g = gt[f];
    q.num_gt += static_cast<int>(g.size());
    q.num_bbox += static_cast<int>(ps.p_bbox.size());
    q.num_cls += static_cast<int>(ps.p_cls.size());
    q.num_soft += static_cast<int>(ps.p_soft.size());
    for (const auto& m : greedy_match(ps.p_bbox, g)) bbox_tp += m ? 1 : 0;

    std::vector<BBox> cls_boxes;
    for (const auto& h : ps.p_cls) cls_boxes.push_back(h.box);
    const auto cm = greedy_match(cls_boxes, g);
    for (std::size_t i = 0; i < cm.size(); ++i) {
      if (!cm[i]) continue;
      ++cls_hit;
      if (g[*cm[i]].class_id == ps.p_cls[i].class_id) ++cls_correct;
    }

    ImageEval ie;
    ie.gts = g;
    for (const auto& h : ps.p_cls) ie.dets.emplace_back(h.box, one_hot(h.class_id, classes), 1.0);
    images.push_back(std::move(ie));
  }
  q.bbox_precision = q.num_bbox > 0 ? static_cast<double>(bbox_tp) / q.num_bbox : 0.0;
  q.bbox_recall = q.num_gt > 0 ? static_cast<double>(bbox_tp) / q.num_gt : 0.0;
  q.cls_accuracy = cls_hit > 0 ? static_cast<double>(cls_correct) / cls_hit : 0.0;
  q.map50 = mean_average_precision(images, 0.5, classes);
  return q;
}

PseudoQuality pseudo_quality(const PseudoLabelSet& pseudo, std::span<const Annotation> gt,
                             int classes) {
  const std::vector<std::vector<Annotation>> g = {std::vector<Annotation>(gt.begin(), gt.end())};
  return pseudo_quality(std::span<const PseudoLabelSet>(&pseudo, 1), g, classes);
}

}  // namespace ssvod
