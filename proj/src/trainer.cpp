// SPDX-License-Identifier: Apache-2.0

#include "ssvod/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ssvod/svg.hpp"

namespace ssvod {

std::string to_string(TrainMode m) { return m == TrainMode::Supervised ? "supervised" : "ssvod"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "supervised") return TrainMode::Supervised;
  if (s == "ssvod") return TrainMode::Ssvod;
  throw std::invalid_argument("unknown mode '" + s + "' (expected supervised or ssvod)");
}

std::string to_string(FlowSource f) {
  return f == FlowSource::Analytic ? "analytic" : "block_matching";
}

FlowSource flow_source_from_string(const std::string& s) {
  if (s == "analytic") return FlowSource::Analytic;
  if (s == "block_matching") return FlowSource::BlockMatching;
  throw std::invalid_argument("unknown flow source '" + s + "'");
}

std::string to_string(SelectionMode m) {
  return m == SelectionMode::ThreeStage ? "three_stage" : "confidence_only";
}

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "three_stage") return SelectionMode::ThreeStage;
  if (s == "confidence_only") return SelectionMode::ConfidenceOnly;
  throw std::invalid_argument("unknown selection mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (!(ema_momentum > 0.0 && ema_momentum < 1.0)) {
    throw std::invalid_argument("TrainConfig: ema_momentum must be in (0,1)");
  }
  if (refs_per_set < 1) throw std::invalid_argument("TrainConfig: refs_per_set must be >= 1");
  if (ref_range < 1) throw std::invalid_argument("TrainConfig: ref_range must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
  if (!(flow.noise_sigma >= 0.0)) throw std::invalid_argument("TrainConfig: flow noise must be >= 0");
  if (flow.block < 3 || flow.block % 2 == 0 || flow.radius < 1) {
    throw std::invalid_argument("TrainConfig: block must be odd >= 3 and radius >= 1");
  }
  thresholds.validate();
  detector.validate();
}

void ema_update(DetectorParams& teacher, const DetectorParams& student, double m) {
  if (!(m > 0.0 && m < 1.0)) throw std::invalid_argument("ema_update: momentum must be in (0,1)");
  if (!teacher.same_shape(student)) throw std::invalid_argument("ema_update: shape mismatch");
  auto t = teacher.tensors();
  const auto s = student.tensors();
  for (std::size_t k = 0; k < t.size(); ++k) {
    for (std::size_t i = 0; i < t[k].size(); ++i) t[k][i] += (1.0 - m) * (s[k][i] - t[k][i]);
  }
}

std::vector<CellFlow> clip_flows(const VideoClip& clip, const MotionTruth* motion, bool flipped,
                                 const FlowOptions& opt, int grid, std::mt19937_64& rng) {
  std::vector<CellFlow> out;
  for (std::size_t j = 0; j < clip.refs.size(); ++j) {
    FlowField ff;
    if (opt.source == FlowSource::Analytic) {
      if (motion == nullptr) throw std::invalid_argument("clip_flows: analytic flow needs motion truth");
      ff = analytic_flow(*motion, clip.key_index, clip.offsets[j], opt.noise_sigma,
                         opt.noise_sigma > 0.0 ? &rng : nullptr);
      if (flipped) ff = ff.flipped_horizontal();
    } else {
      ff = estimate_flow_block_matching(clip.key, clip.refs[j], opt.block, opt.radius);
    }
    out.push_back(downsample_flow(ff, grid));
  }
  return out;
}

namespace {

std::vector<const Frame*> ref_ptrs(const VideoClip& c) {
  std::vector<const Frame*> out;
  for (const auto& f : c.refs) out.push_back(&f);
  return out;
}

void check_frame_size(const Frame& f, const DetectorConfig& cfg) {
  if (f.width() != cfg.frame_size() || f.height() != cfg.frame_size()) {
    throw std::invalid_argument("frame is " + std::to_string(f.width()) + "x" +
                                std::to_string(f.height()) + " but the detector expects " +
                                std::to_string(cfg.frame_size()) + " px");
  }
}

// Marks the center cells of teacher survivors that are not in the target set.
void mark_uncertain(GridTargets& tg, const PseudoLabelSet& ps, bool want_bbox, double w, double h) {
  for (std::size_t k = 0; k < ps.survivors.size() && k < ps.fates.size(); ++k) {
    const Fate f = ps.fates[k];
    const bool in = want_bbox ? (f == Fate::Bbox || f == Fate::BboxCls)
                              : (f == Fate::Cls || f == Fate::BboxCls);
    if (in) continue;
    const auto c = static_cast<std::size_t>(center_cell(ps.survivors[k].bbox, tg.grid, w, h));
    if (!tg.positive[c]) tg.ignore[c] = 1;
  }
}

void ignore_background(GridTargets& tg) {
  for (std::size_t c = 0; c < tg.positive.size(); ++c) {
    if (!tg.positive[c]) tg.ignore[c] = 1;
  }
}

}  // namespace

LossBreakdown train_step(TrainState& state, const StepInputs& in, const TrainConfig& cfg,
                         std::mt19937_64& lab_rng, std::mt19937_64& unl_rng,
                         StepDiagnostics* diag) {
  if (in.labeled == nullptr) throw std::invalid_argument("train_step: labeled set required");
  const DetectorConfig& dc = state.student.config;
  const int grid = dc.grid;
  check_frame_size(in.labeled->key, dc);
  const double W = in.labeled->key.width(), H = in.labeled->key.height();

  const AugmentedClip lab = augment_strong(*in.labeled, lab_rng, cfg.strong);
  std::vector<TargetLabel> labels;
  for (const auto& a : lab.clip.annotations) labels.push_back({a.class_id, a.bbox});
  const GridTargets sup = assign_targets(labels, grid, W, H);
  const auto lab_refs = ref_ptrs(lab.clip);
  const ForwardTrace lt = forward_trace(lab.clip.key, lab_refs, state.student);

  LossInputs li;
  li.labeled = &lt.outputs;
  li.sup = &sup;

  // The trace keeps pointers into the strong clip, so it lives out here.
  std::optional<AugmentedClip> strong;
  ForwardTrace ut;
  GridTargets pcls, pbox;
  std::vector<SoftMatch> soft;
  if (in.unlabeled != nullptr) {
    check_frame_size(in.unlabeled->key, dc);
    const AugmentedClip weak = augment_weak(*in.unlabeled, unl_rng);
    const auto flows = clip_flows(weak.clip, in.unlabeled_motion, weak.record.flip, cfg.flow, grid,
                                  unl_rng);
    const PredictionSets sets = gen_prediction_sets(state.teacher, weak.clip.key, weak.clip.refs,
                                                    weak.clip.offsets, flows,
                                                    cfg.thresholds.tau_init);
    const ConsistencyScores scores = score_consistency(sets.raw, sets.warped);
    const PseudoLabelSet selected = select(sets.raw, scores, cfg.thresholds, cfg.selection);
    strong = augment_strong(*in.unlabeled, unl_rng, cfg.strong);
    PseudoLabelSet mapped = map_pseudo_labels(selected, weak.record, strong->record,
                                              static_cast<int>(W), static_cast<int>(H));

    std::vector<TargetLabel> cls_labels, box_labels;
    for (const auto& h : mapped.p_cls) cls_labels.push_back({h.class_id, h.box});
    for (const auto& b : mapped.p_bbox) box_labels.push_back({std::nullopt, b});
    pcls = assign_targets(cls_labels, grid, W, H);
    pbox = assign_targets(box_labels, grid, W, H);
    if (cfg.pseudo_background) {
      mark_uncertain(pcls, mapped, false, W, H);
      mark_uncertain(pbox, mapped, true, W, H);
    } else {
      ignore_background(pcls);
      ignore_background(pbox);
    }
    for (const auto& s : mapped.p_soft) soft.push_back({center_cell(s.box, grid, W, H), s.dist});

    const auto unl_refs = ref_ptrs(strong->clip);
    ut = forward_trace(strong->clip.key, unl_refs, state.student);
    li.unlabeled = &ut.outputs;
    if (cfg.losses.unsup_cls) li.pseudo_cls = &pcls;
    if (cfg.losses.unsup_bbox) li.pseudo_bbox = &pbox;
    if (cfg.losses.unsup_soft) li.soft = soft;
    if (diag != nullptr) diag->pseudo = std::move(mapped);
  }

  const LossResult lr = compute_losses(li, cfg.loss_options);
  if (!lr.losses.all_finite()) {
    std::ostringstream msg;
    msg << "non-finite loss: sup_cls=" << lr.losses.sup_cls << " sup_bbox=" << lr.losses.sup_bbox
        << " unsup_cls=" << lr.losses.unsup_cls << " unsup_bbox=" << lr.losses.unsup_bbox
        << " unsup_soft=" << lr.losses.unsup_soft;
    throw DivergenceError(msg.str());
  }
  ParamGrads grads = DetectorParams::zeros(dc);
  backward(lt, lr.d_labeled, state.student, grads);
  if (in.unlabeled != nullptr) backward(ut, lr.d_unlabeled, state.student, grads);
  sgd_step(state.student, grads, cfg.lr);
  ema_update(state.teacher, state.student, cfg.ema_momentum);
  return lr.losses;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, TrainMode mode,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (ds.spec.classes != cfg.detector.classes) {
    throw std::invalid_argument("train: dataset has " + std::to_string(ds.spec.classes) +
                                " classes but the detector is configured for " +
                                std::to_string(cfg.detector.classes));
  }
  const auto splits = sample_sparsity(ds, cfg.sparsity);
  std::vector<std::pair<int, int>> labeled, unlabeled;
  for (std::size_t v = 0; v < splits.size(); ++v) {
    for (int t : splits[v].labeled) labeled.emplace_back(static_cast<int>(v), t);
    for (int t : splits[v].unlabeled) unlabeled.emplace_back(static_cast<int>(v), t);
  }
  if (labeled.empty()) throw std::invalid_argument("train: the labeled pool is empty");
  if (mode == TrainMode::Ssvod && unlabeled.empty()) {
    throw std::invalid_argument("train: ssvod mode needs unlabeled key frames, the plan leaves none");
  }

  std::mt19937_64 init_rng(derive_seed(cfg.seed, 1));
  std::mt19937_64 lab_rng(derive_seed(cfg.seed, 2));
  std::mt19937_64 unl_rng(derive_seed(cfg.seed, 3));
  TrainResult res;
  res.state.student = DetectorParams::initialize(cfg.detector, init_rng);
  res.state.teacher = res.state.student;

  std::uniform_int_distribution<std::size_t> pick_lab(0, labeled.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_unl(0, unlabeled.empty() ? 0 : unlabeled.size() - 1);
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto [lv, lt] = labeled[pick_lab(lab_rng)];
    const auto loffs = draw_offsets(cfg.refs_per_set, cfg.ref_range, lab_rng);
    const VideoClip lclip = load_clip(ds, lv, lt, loffs, cfg.ref_range, lab_rng);
    StepInputs in;
    in.labeled = &lclip;
    VideoClip uclip;
    if (mode == TrainMode::Ssvod) {
      const auto [uv, ut] = unlabeled[pick_unl(unl_rng)];
      const auto uoffs = draw_offsets(cfg.refs_per_set, cfg.ref_range, unl_rng);
      uclip = load_clip(ds, uv, ut, uoffs, cfg.ref_range, unl_rng);
      in.unlabeled = &uclip;
      in.unlabeled_motion = &ds.videos[static_cast<std::size_t>(uv)].motion;
    }
    LossBreakdown lb;
    try {
      lb = train_step(res.state, in, cfg, lab_rng, unl_rng);
    } catch (const DivergenceError& e) {
      throw DivergenceError("iteration " + std::to_string(it) + ": " + e.what());
    }
    res.history.push_back(lb);
    if (hooks.on_step) hooks.on_step(it, res.state, lb);
  }
  return res;
}

std::string history_csv(const std::vector<LossBreakdown>& history) {
  std::string out = "iteration,sup_cls,sup_bbox,unsup_cls,unsup_bbox,unsup_soft,total\n";
  char buf[256];
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, h.sup_cls,
                  h.sup_bbox, h.unsup_cls, h.unsup_bbox, h.unsup_soft, h.total());
    out += buf;
  }
  return out;
}

std::string loss_curves_svg(const std::vector<LossBreakdown>& history) {
  std::vector<Series> s = {{"sup_cls", {}}, {"sup_bbox", {}}, {"unsup_cls", {}},
                           {"unsup_bbox", {}}, {"unsup_soft", {}}};
  for (const auto& h : history) {
    s[0].y.push_back(h.sup_cls);
    s[1].y.push_back(h.sup_bbox);
    s[2].y.push_back(h.unsup_cls);
    s[3].y.push_back(h.unsup_bbox);
    s[4].y.push_back(h.unsup_soft);
  }
  return line_chart_svg("Training losses", s, "iteration");
}

namespace {

ImageEval predict_frame(const DetectorParams& params, const Video& vid,
                        const std::vector<FeatureMap>& feats, int t, const EvalOptions& opt,
                        std::uint64_t stream) {
  std::mt19937_64 rng(derive_seed(opt.seed, stream));
  const int n = static_cast<int>(vid.frames.size());
  std::vector<int> offs = all_offsets(opt.ref_range);
  if (opt.refs != static_cast<int>(offs.size())) offs = draw_offsets(opt.refs, opt.ref_range, rng);
  offs = resolve_offsets(t, n, offs, opt.ref_range, rng);
  std::vector<FeatureMap> refs;
  refs.reserve(offs.size());
  for (int j : offs) refs.push_back(feats[static_cast<std::size_t>(t + j)]);
  const FeatureMap agg = aggregate(feats[static_cast<std::size_t>(t)], refs, params.config.temperature);
  ImageEval ie;
  ie.dets = decode(apply_head(agg, params), params.config);
  ie.gts = vid.annotations[static_cast<std::size_t>(t)];
  for (const auto& g : ie.gts) {
    double m = 1.0;
    for (const auto& tr : vid.motion.tracks) {
      if (tr.track_id == g.track_id) m = motion_iou(tr, t);
    }
    ie.gt_motion_iou.push_back(m);
  }
  return ie;
}

}  // namespace

std::vector<ImageEval> predict_dataset(const DetectorParams& params, const Dataset& ds,
                                       const EvalOptions& opt) {
  if (opt.refs < 0 || opt.ref_range < 1) throw std::invalid_argument("EvalOptions: bad reference settings");
  if (ds.spec.classes != params.config.classes) {
    throw std::invalid_argument("checkpoint predicts " + std::to_string(params.config.classes) +
                                " classes but the dataset has " + std::to_string(ds.spec.classes));
  }
  std::vector<std::vector<ImageEval>> per_video(static_cast<std::size_t>(ds.num_videos()));
  auto run = [&](int v) {
    const Video& vid = ds.videos[static_cast<std::size_t>(v)];
    std::vector<FeatureMap> feats;
    for (const auto& f : vid.frames) {
      check_frame_size(f, params.config);
      feats.push_back(extract_features(f, params));
    }
    std::vector<int> frames = vid.key_frames;
    if (!opt.key_frames_only || frames.empty()) {
      frames.clear();
      for (int t = 0; t < static_cast<int>(vid.frames.size()); ++t) frames.push_back(t);
    }
    for (int t : frames) {
      const auto stream = static_cast<std::uint64_t>(v) * 100003ULL + static_cast<std::uint64_t>(t);
      per_video[static_cast<std::size_t>(v)].push_back(predict_frame(params, vid, feats, t, opt, stream));
    }
  };
  const int workers = std::clamp(opt.threads, 1, std::max(1, ds.num_videos()));
  if (workers == 1) {
    for (int v = 0; v < ds.num_videos(); ++v) run(v);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int v = w; v < ds.num_videos(); v += workers) run(v);
      });
    }
    for (auto& th : pool) th.join();
  }
  std::vector<ImageEval> out;
  for (auto& pv : per_video) {
    for (auto& ie : pv) out.push_back(std::move(ie));
  }
  return out;
}

EvalReport evaluate_model(const DetectorParams& params, const Dataset& ds,
                          const EvalOptions& opt) {
  const auto images = predict_dataset(params, ds, opt);
  return evaluate_detections(images, ds.spec.classes, ds.spec.width, ds.spec.height);
}

std::vector<PseudoFrame> inspect_pseudo(const DetectorParams& teacher, const Dataset& ds,
                                        const TrainConfig& cfg, std::uint64_t seed) {
  cfg.thresholds.validate();
  const auto splits = sample_sparsity(ds, cfg.sparsity);
  std::mt19937_64 rng(derive_seed(seed, 4));
  std::vector<PseudoFrame> out;
  for (std::size_t v = 0; v < splits.size(); ++v) {
    for (int t : splits[v].unlabeled) {
      const auto offs = draw_offsets(cfg.refs_per_set, cfg.ref_range, rng);
      const VideoClip clip = load_clip(ds, static_cast<int>(v), t, offs, cfg.ref_range, rng);
      const auto flows = clip_flows(clip, &ds.videos[v].motion, false, cfg.flow,
                                    teacher.config.grid, rng);
      const PredictionSets sets = gen_prediction_sets(teacher, clip.key, clip.refs, clip.offsets,
                                                      flows, cfg.thresholds.tau_init);
      const ConsistencyScores scores = score_consistency(sets.raw, sets.warped);
      PseudoFrame pf;
      pf.video = static_cast<int>(v);
      pf.frame = t;
      pf.three_stage = select(sets.raw, scores, cfg.thresholds, SelectionMode::ThreeStage);
      pf.confidence_only = select(sets.raw, scores, cfg.thresholds, SelectionMode::ConfidenceOnly);
      pf.gt = clip.annotations;
      out.push_back(std::move(pf));
    }
  }
  return out;
}

}  // namespace ssvod
