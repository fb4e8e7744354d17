// SPDX-License-Identifier: Apache-2.0

#include "ssvod/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "json.hpp"
#include "ssvod/svg.hpp"

namespace ssvod {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Strict object reader: every key must be consumed by a getter.
class Reader {
 public:
  Reader(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) throw UserError(ctx_ + ": expected a JSON object");
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw UserError(ctx_ + "." + key + ": " + e.what());
    }
  }
  bool has(const char* key) const { return j_.contains(key); }
  std::optional<Reader> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Reader(*it, ctx_ + "." + key);
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw UserError(ctx_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

json detector_json(const DetectorConfig& d) {
  return {{"grid", d.grid},         {"depth", d.depth},
          {"classes", d.classes},   {"patch", d.patch},
          {"temperature", d.temperature}, {"decode_floor", d.decode_floor},
          {"nms_iou", d.nms_iou},   {"head_context", d.head_context}};
}

void read_detector(Reader r, DetectorConfig& d) {
  r.get("grid", d.grid);
  r.get("depth", d.depth);
  r.get("classes", d.classes);
  r.get("patch", d.patch);
  r.get("temperature", d.temperature);
  r.get("decode_floor", d.decode_floor);
  r.get("nms_iou", d.nms_iou);
  r.get("head_context", d.head_context);
  r.finish();
}

json full_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  json j;
  j["dataset"] = c.dataset;
  j["eval_dataset"] = c.eval_dataset;
  j["output_dir"] = c.output_dir;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["sparsity"] = {{"key_frames", t.sparsity.key_frames},
                   {"labeled_key_frames", t.sparsity.labeled_key_frames},
                   {"unlabeled_key_frames", t.sparsity.unlabeled_key_frames},
                   {"labeled_video_fraction", t.sparsity.labeled_video_fraction},
                   {"seed", t.sparsity.seed}};
  j["thresholds"] = {{"tau_init", t.thresholds.tau_init},
                     {"gamma_c", t.thresholds.gamma_c},
                     {"zeta_iou", t.thresholds.zeta_iou},
                     {"eta_div", t.thresholds.eta_div}};
  j["train"] = {
      {"iterations", t.iterations},
      {"lr", t.lr},
      {"ema_momentum", t.ema_momentum},
      {"refs_per_set", t.refs_per_set},
      {"ref_range", t.ref_range},
      {"selection", to_string(t.selection)},
      {"losses",
       {{"unsup_cls", t.losses.unsup_cls},
        {"unsup_bbox", t.losses.unsup_bbox},
        {"unsup_soft", t.losses.unsup_soft}}},
      {"smooth_l1_beta", t.loss_options.smooth_l1_beta},
      {"objectness_per_positive", t.loss_options.objectness_per_positive},
      {"kl_eps", t.loss_options.kl_eps},
      {"swap_kl_arguments", t.loss_options.swap_kl_arguments},
      {"pseudo_background", t.pseudo_background},
      {"flow",
       {{"source", to_string(t.flow.source)},
        {"noise_sigma", t.flow.noise_sigma},
        {"block", t.flow.block},
        {"radius", t.flow.radius}}},
      {"augment",
       {{"flip_p", t.strong.flip_p},
        {"brightness_p", t.strong.brightness_p},
        {"brightness_max", t.strong.brightness_max},
        {"contrast_p", t.strong.contrast_p},
        {"contrast_min", t.strong.contrast_min},
        {"contrast_max", t.strong.contrast_max},
        {"translate_p", t.strong.translate_p},
        {"translate_ratio", t.strong.translate_ratio},
        {"cutout_min", t.strong.cutout_min},
        {"cutout_max", t.strong.cutout_max},
        {"cutout_ratio", t.strong.cutout_ratio}}},
      {"checkpoint_every", t.checkpoint_every},
      {"detector", detector_json(t.detector)}};
  j["eval"] = {{"refs", c.eval.refs},
               {"ref_range", c.eval.ref_range},
               {"key_frames_only", c.eval.key_frames_only},
               {"seed", c.eval.seed},
               {"use_teacher", c.eval_teacher}};
  return j;
}

std::string hex64(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string hash_json(const json& j) {
  const std::string s = j.dump();
  return hex64(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
}

json hashed_part(const ExperimentConfig& c) {
  json j = full_json(c);
  j.erase("seed");
  j.erase("output_dir");
  j["sparsity"].erase("seed");
  j["eval"].erase("seed");
  return j;
}

// The supervised counterpart of a setting: everything the supervised
// objective does not read is dropped.
std::string setting_hash(const ExperimentConfig& c) {
  json j = hashed_part(c);
  j.erase("mode");
  j.erase("thresholds");
  for (const char* k : {"selection", "losses", "kl_eps", "swap_kl_arguments", "pseudo_background", "flow"}) {
    j["train"].erase(k);
  }
  j["sparsity"].erase("unlabeled_key_frames");
  return hash_json(j);
}

void ensure_empty_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw UserError(dir.string() + " exists and is not a directory");
  }
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UserError(dir.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

Dataset load_dataset_checked(const std::string& path) {
  if (path.empty()) throw UserError("no dataset path given");
  if (!fs::exists(fs::path(path) / "meta.json")) {
    throw UserError("dataset not found: " + path + " (missing meta.json)");
  }
  return load_dataset(path);
}

std::string ckpt_name(const char* who, int it) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d.svdp", who, it);
  return buf;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) { return full_json(cfg).dump(2) + "\n"; }

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UserError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  TrainConfig& t = c.train;
  Reader r(j, "config");
  r.get("dataset", c.dataset);
  r.get("eval_dataset", c.eval_dataset);
  r.get("output_dir", c.output_dir);
  std::string mode = to_string(c.mode);
  r.get("mode", mode);
  r.get("seed", c.seed);
  t.seed = c.seed;
  t.sparsity.seed = c.seed;
  if (auto s = r.child("sparsity")) {
    s->get("key_frames", t.sparsity.key_frames);
    s->get("labeled_key_frames", t.sparsity.labeled_key_frames);
    s->get("unlabeled_key_frames", t.sparsity.unlabeled_key_frames);
    s->get("labeled_video_fraction", t.sparsity.labeled_video_fraction);
    s->get("seed", t.sparsity.seed);
    s->finish();
  }
  if (auto s = r.child("thresholds")) {
    s->get("tau_init", t.thresholds.tau_init);
    s->get("gamma_c", t.thresholds.gamma_c);
    s->get("zeta_iou", t.thresholds.zeta_iou);
    s->get("eta_div", t.thresholds.eta_div);
    s->finish();
  }
  if (auto s = r.child("train")) {
    s->get("iterations", t.iterations);
    s->get("lr", t.lr);
    s->get("ema_momentum", t.ema_momentum);
    s->get("refs_per_set", t.refs_per_set);
    s->get("ref_range", t.ref_range);
    std::string sel = to_string(t.selection);
    s->get("selection", sel);
    if (auto l = s->child("losses")) {
      l->get("unsup_cls", t.losses.unsup_cls);
      l->get("unsup_bbox", t.losses.unsup_bbox);
      l->get("unsup_soft", t.losses.unsup_soft);
      l->finish();
    }
    s->get("smooth_l1_beta", t.loss_options.smooth_l1_beta);
    s->get("objectness_per_positive", t.loss_options.objectness_per_positive);
    s->get("kl_eps", t.loss_options.kl_eps);
    s->get("swap_kl_arguments", t.loss_options.swap_kl_arguments);
    s->get("pseudo_background", t.pseudo_background);
    if (auto f = s->child("flow")) {
      std::string src = to_string(t.flow.source);
      f->get("source", src);
      f->get("noise_sigma", t.flow.noise_sigma);
      f->get("block", t.flow.block);
      f->get("radius", t.flow.radius);
      f->finish();
      try {
        t.flow.source = flow_source_from_string(src);
      } catch (const std::invalid_argument& e) {
        throw UserError(std::string("config.train.flow.source: ") + e.what());
      }
    }
    if (auto a = s->child("augment")) {
      a->get("flip_p", t.strong.flip_p);
      a->get("brightness_p", t.strong.brightness_p);
      a->get("brightness_max", t.strong.brightness_max);
      a->get("contrast_p", t.strong.contrast_p);
      a->get("contrast_min", t.strong.contrast_min);
      a->get("contrast_max", t.strong.contrast_max);
      a->get("translate_p", t.strong.translate_p);
      a->get("translate_ratio", t.strong.translate_ratio);
      a->get("cutout_min", t.strong.cutout_min);
      a->get("cutout_max", t.strong.cutout_max);
      a->get("cutout_ratio", t.strong.cutout_ratio);
      a->finish();
    }
    s->get("checkpoint_every", t.checkpoint_every);
    if (auto d = s->child("detector")) read_detector(*d, t.detector);
    s->finish();
    try {
      t.selection = selection_mode_from_string(sel);
    } catch (const std::invalid_argument& e) {
      throw UserError(std::string("config.train.selection: ") + e.what());
    }
  }
  if (auto e = r.child("eval")) {
    e->get("refs", c.eval.refs);
    e->get("ref_range", c.eval.ref_range);
    e->get("key_frames_only", c.eval.key_frames_only);
    e->get("seed", c.eval.seed);
    e->get("use_teacher", c.eval_teacher);
    e->finish();
  }
  r.finish();
  try {
    c.mode = train_mode_from_string(mode);
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(std::string("config: ") + e.what());
  }
  return c;
}

std::string config_hash(const ExperimentConfig& cfg) { return hash_json(hashed_part(cfg)); }

Dataset cmd_gen_data(const GenDataOptions& opt, std::ostream& log) {
  VideoSpec spec;
  if (opt.spec_file) {
    if (!fs::exists(*opt.spec_file)) throw UserError("spec file not found: " + *opt.spec_file);
    try {
      spec = spec_from_json(read_text_file(*opt.spec_file));
    } catch (const std::invalid_argument& e) {
      throw UserError(e.what());
    }
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  if (opt.videos <= 0) throw UserError("--videos must be > 0");
  ensure_empty_dir(opt.out_dir, opt.force);
  Dataset ds = generate_dataset(spec, opt.videos, opt.seed, opt.threads);
  write_dataset(ds, opt.out_dir);
  log << "generated " << ds.num_videos() << " videos x " << spec.frames << " frames ("
      << spec.width << "x" << spec.height << "), " << spec.classes << " classes -> "
      << opt.out_dir << "\n";
  return ds;
}

TrainOutcome run_experiment(const ExperimentConfig& cfg, const Dataset& train_set,
                            const Dataset* eval_set, int threads, std::ostream& log) {
  if (cfg.output_dir.empty()) throw UserError("config: output_dir is required");
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  ExperimentConfig resolved = cfg;
  resolved.train.seed = cfg.seed;
  write_text_file(out / "config.json", config_to_json(resolved));

  DetectorParams last_student, last_teacher;
  TrainHooks hooks;
  const int every = resolved.train.checkpoint_every;
  hooks.on_step = [&](int it, const TrainState& st, const LossBreakdown&) {
    last_student = st.student;
    last_teacher = st.teacher;
    if (every > 0 && (it + 1) % every == 0) {
      save_params(out / ckpt_name("student", it + 1), st.student);
      save_params(out / ckpt_name("teacher", it + 1), st.teacher);
    }
  };
  TrainOutcome oc;
  try {
    oc.result = train(train_set, resolved.train, resolved.mode, hooks);
  } catch (const DivergenceError&) {
    if (!last_student.embed_w.empty()) {
      save_params(out / "student_last_good.svdp", last_student);
      save_params(out / "teacher_last_good.svdp", last_teacher);
    }
    throw;
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  write_text_file(out / "history.csv", history_csv(oc.result.history));
  write_text_file(out / "loss_curves.svg", loss_curves_svg(oc.result.history));
  save_params(out / "student_final.svdp", oc.result.state.student);
  save_params(out / "teacher_final.svdp", oc.result.state.teacher);
  log << to_string(resolved.mode) << " run: " << resolved.train.iterations << " iterations -> "
      << out.string() << "\n";
  if (eval_set != nullptr) {
    EvalOptions eo = resolved.eval;
    eo.threads = threads;
    const DetectorParams& model =
        resolved.eval_teacher ? oc.result.state.teacher : oc.result.state.student;
    oc.report = evaluate_model(model, *eval_set, eo);
    write_text_file(out / "report.json", report_to_json(*oc.report));
    write_text_file(out / "report.csv", report_to_csv(*oc.report));
    char buf[128];
    std::snprintf(buf, sizeof buf, "mAP@0.5 %.4f  mAP@0.75 %.4f  mAP@[.5:.95] %.4f\n",
                  oc.report->map50, oc.report->map75, oc.report->map_range);
    log << buf;
  }
  return oc;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, int threads, std::ostream& log) {
  const Dataset train_set = load_dataset_checked(cfg.dataset);
  std::optional<Dataset> eval_set;
  if (!cfg.eval_dataset.empty()) eval_set = load_dataset_checked(cfg.eval_dataset);
  return run_experiment(cfg, train_set, eval_set ? &*eval_set : nullptr, threads, log);
}

DetectorParams load_checkpoint(const std::string& path, const std::optional<std::string>& config_file,
                               int classes, TrainConfig* train_out) {
  if (!fs::exists(path)) throw UserError("checkpoint not found: " + path);
  TrainConfig tc;
  tc.detector.classes = classes;
  std::optional<fs::path> cfg_path;
  if (config_file) {
    cfg_path = *config_file;
  } else if (fs::exists(fs::path(path).parent_path() / "config.json")) {
    cfg_path = fs::path(path).parent_path() / "config.json";
  }
  if (cfg_path) {
    if (!fs::exists(*cfg_path)) throw UserError("config not found: " + cfg_path->string());
    tc = config_from_json(read_text_file(*cfg_path)).train;
  }
  if (train_out != nullptr) *train_out = tc;
  try {
    return load_params(path, tc.detector);
  } catch (const std::runtime_error& e) {
    throw UserError(path + ": " + e.what());
  }
}

EvalReport cmd_eval(const EvalCommandOptions& opt, std::ostream& log) {
  const Dataset ds = load_dataset_checked(opt.dataset);
  const DetectorParams params = load_checkpoint(opt.checkpoint, opt.config_file, ds.spec.classes);
  const auto images = predict_dataset(params, ds, opt.eval);
  const EvalReport rep = evaluate_detections(images, ds.spec.classes, ds.spec.width, ds.spec.height);
  fs::create_directories(opt.out_dir);
  write_text_file(fs::path(opt.out_dir) / "report.json", report_to_json(rep));
  write_text_file(fs::path(opt.out_dir) / "report.csv", report_to_csv(rep));
  if (opt.write_curves) {
    const fs::path cdir = fs::path(opt.out_dir) / "curves";
    fs::create_directories(cdir);
    for (int c = 0; c < ds.spec.classes; ++c) {
      char name[64];
      std::snprintf(name, sizeof name, "pr_class_%d.csv", c);
      write_text_file(cdir / name, pr_curve_csv(pr_curve(images, 0.5, c)));
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d images  mAP@0.5 %.4f  mAP@0.75 %.4f  mAP@[.5:.95] %.4f\n",
                rep.images, rep.map50, rep.map75, rep.map_range);
  log << buf;
  return rep;
}

InspectSummary summarize_pseudo(const std::vector<PseudoFrame>& frames, int classes) {
  std::vector<PseudoLabelSet> three, conf;
  std::vector<std::vector<Annotation>> gts;
  std::map<std::string, int> counts;
  for (Fate f : {Fate::Bbox, Fate::Cls, Fate::Soft, Fate::BboxCls, Fate::Discarded}) counts[to_string(f)] = 0;
  InspectSummary s;
  for (const auto& pf : frames) {
    three.push_back(pf.three_stage);
    conf.push_back(pf.confidence_only);
    gts.push_back(pf.gt);
    for (Fate f : pf.three_stage.fates) ++counts[to_string(f)];
    s.survivors += static_cast<int>(pf.three_stage.survivors.size());
  }
  s.three_stage = pseudo_quality(three, gts, classes);
  s.confidence_only = pseudo_quality(conf, gts, classes);
  for (Fate f : {Fate::Bbox, Fate::Cls, Fate::Soft, Fate::BboxCls, Fate::Discarded}) {
    s.fate_counts.emplace_back(to_string(f), counts[to_string(f)]);
  }
  return s;
}

std::string pseudo_jsonl(const std::vector<PseudoFrame>& frames) {
  std::string out;
  for (const auto& pf : frames) {
    const auto& ps = pf.three_stage;
    for (std::size_t k = 0; k < ps.survivors.size(); ++k) {
      const auto& d = ps.survivors[k];
      json rec = {{"video", pf.video},
                  {"frame", pf.frame},
                  {"bbox", {d.bbox.x1(), d.bbox.y1(), d.bbox.x2(), d.bbox.y2()}},
                  {"class", d.hard_class},
                  {"confidence", d.confidence},
                  {"xiou", ps.scores.xiou[k]},
                  {"xdiv", ps.scores.xdiv[k]},
                  {"fate", to_string(ps.fates[k])}};
      out += rec.dump() + "\n";
    }
  }
  return out;
}

InspectSummary cmd_inspect_pseudo(const InspectOptions& opt, std::ostream& log) {
  const Dataset ds = load_dataset_checked(opt.dataset);
  TrainConfig tc;
  const DetectorParams teacher = load_checkpoint(opt.checkpoint, opt.config_file, ds.spec.classes, &tc);
  const auto frames = inspect_pseudo(teacher, ds, tc, opt.seed);
  if (!opt.out_file.empty()) {
    const fs::path p = opt.out_file;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text_file(p, pseudo_jsonl(frames));
  }
  const InspectSummary s = summarize_pseudo(frames, ds.spec.classes);
  char buf[256];
  log << "unlabeled key frames: " << frames.size() << ", survivors: " << s.survivors << "\n";
  for (const auto& [name, n] : s.fate_counts) log << "  " << name << ": " << n << "\n";
  auto row = [&](const char* name, const PseudoQuality& q) {
    std::snprintf(buf, sizeof buf,
                  "%-16s pseudo mAP@0.5 %.4f  bbox P %.4f R %.4f  cls acc %.4f  (bbox %d, cls %d, soft %d)\n",
                  name, q.map50, q.bbox_precision, q.bbox_recall, q.cls_accuracy, q.num_bbox,
                  q.num_cls, q.num_soft);
    log << buf;
  };
  row("three-stage", s.three_stage);
  row("confidence-only", s.confidence_only);
  return s;
}

std::vector<ReportRow> collect_report(const std::vector<std::string>& run_dirs, std::ostream& log) {
  if (run_dirs.empty()) throw UserError("report: at least one run directory is required");
  std::map<std::string, ReportRow> rows;
  std::vector<std::string> order;
  std::map<std::string, std::string> setting_of;
  for (const auto& d : run_dirs) {
    const fs::path cfgp = fs::path(d) / "config.json";
    const fs::path repp = fs::path(d) / "report.json";
    if (!fs::exists(cfgp) || !fs::exists(repp)) {
      throw UserError("report: " + d + " lacks config.json or report.json");
    }
    const ExperimentConfig c = config_from_json(read_text_file(cfgp));
    const EvalReport r = report_from_json(read_text_file(repp));
    const std::string h = config_hash(c);
    if (!rows.count(h)) {
      ReportRow row;
      row.hash = h;
      row.mode = to_string(c.mode);
      row.label = to_string(c.mode);
      if (c.mode == TrainMode::Ssvod) {
        const auto& l = c.train.losses;
        row.label += std::string(l.unsup_cls ? "+cls" : "") + (l.unsup_bbox ? "+bbox" : "") +
                     (l.unsup_soft ? "+soft" : "");
        if (c.train.sparsity.unlabeled_key_frames >= 0) {
          row.label += "/u" + std::to_string(c.train.sparsity.unlabeled_key_frames);
        }
      }
      rows[h] = row;
      order.push_back(h);
      setting_of[h] = setting_hash(c);
    }
    rows[h].runs.push_back(d);
    rows[h].map50.push_back(r.map50);
  }
  if (order.size() > 1) {
    log << "warning: " << order.size() << " distinct configurations, reported as separate rows\n";
  }
  std::vector<ReportRow> out;
  for (const auto& h : order) {
    ReportRow row = rows[h];
    double sum = 0.0;
    for (double v : row.map50) sum += v;
    row.mean = sum / static_cast<double>(row.map50.size());
    if (row.map50.size() > 1) {
      double ss = 0.0;
      for (double v : row.map50) ss += (v - row.mean) * (v - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(row.map50.size() - 1));
    }
    out.push_back(row);
  }
  for (auto& row : out) {
    if (row.mode != "ssvod") continue;
    for (const auto& other : out) {
      if (other.mode == "supervised" && setting_of[other.hash] == setting_of[row.hash]) {
        row.delta = row.mean - other.mean;
      }
    }
  }
  return out;
}

std::string report_rows_csv(const std::vector<ReportRow>& rows) {
  std::string out = "config_hash,label,runs,map50_mean,map50_std,delta_vs_supervised\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,", r.hash.c_str(), r.label.c_str(), r.runs.size(),
                  r.mean);
    out += buf;
    if (r.stddev) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.stddev);
      out += buf;
    }
    out += ",";
    if (r.delta) {
      std::snprintf(buf, sizeof buf, "%+.6f", *r.delta);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                std::ostream& log) {
  const auto rows = collect_report(run_dirs, log);
  fs::create_directories(out_dir);
  write_text_file(fs::path(out_dir) / "comparison.csv", report_rows_csv(rows));
  std::vector<Bar> bars;
  for (const auto& r : rows) bars.push_back({r.label, 100.0 * r.mean, r.stddev ? 100.0 * *r.stddev : 0.0});
  write_text_file(fs::path(out_dir) / "comparison.svg", bar_chart_svg("mAP@0.5 by configuration", bars, "mAP@0.5 (%)"));
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-28s n=%zu  mAP@0.5 %6.2f", r.label.c_str(), r.runs.size(),
                  100.0 * r.mean);
    log << buf;
    if (r.stddev) {
      std::snprintf(buf, sizeof buf, " +- %.2f", 100.0 * *r.stddev);
      log << buf;
    }
    if (r.delta) {
      std::snprintf(buf, sizeof buf, "  delta %+.2f", 100.0 * *r.delta);
      log << buf;
    }
    log << "  [" << r.hash << "]\n";
  }
}

}  // namespace ssvod
