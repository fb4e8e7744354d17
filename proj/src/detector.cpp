// SPDX-License-Identifier: Apache-2.0

#include "ssvod/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

namespace ssvod {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double u) { return std::log(u / (1.0 - u)); }

// max(z,0) - y z + log(1 + exp(-|z|))
double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

void softmax(std::span<const double> z, std::span<double> out) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

constexpr double kNormFloor = 1e-12;

void check_frame(const Frame& f, const DetectorConfig& cfg) {
  if (f.width() != cfg.frame_size() || f.height() != cfg.frame_size()) {
    throw std::invalid_argument(
        "detector: frame " + std::to_string(f.width()) + "x" +
        std::to_string(f.height()) + " does not tile into " +
        std::to_string(cfg.grid) + "x" + std::to_string(cfg.grid) + " patches of " +
        std::to_string(cfg.patch) + " px");
  }
}

void gather_patch(const Frame& f, int row, int col, int patch, std::vector<double>& x) {
  x.resize(static_cast<std::size_t>(patch * patch * 3));
  std::size_t i = 0;
  for (int py = 0; py < patch; ++py) {
    for (int px = 0; px < patch; ++px) {
      for (int ch = 0; ch < 3; ++ch) {
        x[i++] = f.at(col * patch + px, row * patch + py, ch);
      }
    }
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
  return v;
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void DetectorConfig::validate() const {
  if (grid <= 0 || depth <= 0 || classes <= 0 || patch <= 0) {
    throw std::invalid_argument("DetectorConfig: grid, depth, classes and patch must be positive");
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("DetectorConfig: temperature must be > 0");
  if (!(decode_floor >= 0.0 && decode_floor <= 1.0)) {
    throw std::invalid_argument("DetectorConfig: decode_floor must be in [0,1]");
  }
  if (head_context < 0 || head_context >= grid) {
    throw std::invalid_argument("DetectorConfig: head_context must be in [0, grid)");
  }
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) {
    throw std::invalid_argument("DetectorConfig: nms_iou must be in (0,1]");
  }
}

DetectorParams DetectorParams::zeros(const DetectorConfig& cfg) {
  cfg.validate();
  DetectorParams p;
  p.config = cfg;
  p.embed_w.assign(static_cast<std::size_t>(cfg.patch_inputs() * cfg.depth), 0.0);
  p.embed_b.assign(static_cast<std::size_t>(cfg.depth), 0.0);
  p.head_w.assign(static_cast<std::size_t>(cfg.head_inputs() * cfg.outputs()), 0.0);
  p.head_b.assign(static_cast<std::size_t>(cfg.outputs()), 0.0);
  return p;
}

DetectorParams DetectorParams::initialize(const DetectorConfig& cfg, std::mt19937_64& rng) {
  DetectorParams p = zeros(cfg);
  const int in = cfg.patch_inputs();
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  for (double& w : p.embed_w) w = n(rng);
  for (int d = 0; d < cfg.depth; ++d) {
    double s = 0.0;
    for (int i = 0; i < in; ++i) s += p.embed_w[static_cast<std::size_t>(i * cfg.depth + d)];
    p.embed_b[static_cast<std::size_t>(d)] = -0.5 * s;
  }
  p.head_b[0] = std::log(kInitObjectness / (1.0 - kInitObjectness));
  return p;
}

bool DetectorParams::same_shape(const DetectorParams& o) const {
  return embed_w.size() == o.embed_w.size() && embed_b.size() == o.embed_b.size() &&
         head_w.size() == o.head_w.size() && head_b.size() == o.head_b.size();
}

bool DetectorParams::all_finite() const {
  for (auto t : tensors()) {
    for (double v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::vector<std::uint8_t> serialize_params(const DetectorParams& p) {
  std::vector<std::uint8_t> out = {'S', 'V', 'D', 'P'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(p.config.grid));
  put_u32(out, static_cast<std::uint32_t>(p.config.depth));
  put_u32(out, static_cast<std::uint32_t>(p.config.classes));
  put_u32(out, static_cast<std::uint32_t>(p.config.patch));
  for (auto t : p.tensors()) {
    for (double v : t) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

DetectorParams deserialize_params(std::span<const std::uint8_t> bytes,
                                  const DetectorConfig& cfg) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), "SVDP", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  if (get_u32(bytes, 4) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version");
  }
  const int g = static_cast<int>(get_u32(bytes, 8));
  const int d = static_cast<int>(get_u32(bytes, 12));
  const int c = static_cast<int>(get_u32(bytes, 16));
  const int pp = static_cast<int>(get_u32(bytes, 20));
  if (g != cfg.grid || d != cfg.depth || c != cfg.classes || pp != cfg.patch) {
    throw std::runtime_error("checkpoint shape (G=" + std::to_string(g) + " D=" +
                             std::to_string(d) + " C=" + std::to_string(c) + " P=" +
                             std::to_string(pp) + ") does not match config");
  }
  DetectorParams p = DetectorParams::zeros(cfg);
  if (bytes.size() != 24 + p.size() * 8) {
    throw std::runtime_error("checkpoint: payload size mismatch");
  }
  std::size_t pos = 24;
  for (auto t : p.tensors()) {
    for (double& v : t) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
      v = std::bit_cast<double>(bits);
      pos += 8;
    }
  }
  return p;
}

void save_params(const std::filesystem::path& path, const DetectorParams& p) {
  write_file_bytes(path, serialize_params(p));
}

DetectorParams load_params(const std::filesystem::path& path, const DetectorConfig& cfg) {
  return deserialize_params(read_file_bytes(path), cfg);
}

CellOutputs::CellOutputs(int grid, int classes) : grid_(grid), classes_(classes) {
  data_.assign(static_cast<std::size_t>(grid * grid * (classes + 5)), 0.0);
}

FeatureMap extract_features(const Frame& frame, const DetectorParams& params) {
  const auto& cfg = params.config;
  check_frame(frame, cfg);
  const int depth = cfg.depth;
  FeatureMap fm(cfg.grid, depth);
  std::vector<double> x;
  for (int r = 0; r < cfg.grid; ++r) {
    for (int c = 0; c < cfg.grid; ++c) {
      gather_patch(frame, r, c, cfg.patch, x);
      auto z = fm.cell(r * cfg.grid + c);
      std::copy(params.embed_b.begin(), params.embed_b.end(), z.begin());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* w = &params.embed_w[i * static_cast<std::size_t>(depth)];
        for (int d = 0; d < depth; ++d) z[static_cast<std::size_t>(d)] += xi * w[d];
      }
      for (double& v : z) v = std::tanh(v);
    }
  }
  return fm;
}

namespace {

// Similarities of the key against every member (key first).
void member_similarities(std::span<const double> key, double key_norm,
                         std::span<const FeatureMap> others, int cell,
                         std::vector<double>& sims, std::vector<double>& norms) {
  sims.resize(others.size() + 1);
  norms.resize(others.size() + 1);
  norms[0] = key_norm;
  sims[0] = key_norm > kNormFloor ? 1.0 : 0.0;
  for (std::size_t s = 0; s < others.size(); ++s) {
    const auto v = others[s].cell(cell);
    const double nv = std::sqrt(dot(v, v));
    norms[s + 1] = nv;
    sims[s + 1] = (key_norm > kNormFloor && nv > kNormFloor)
                      ? dot(key, v) / (key_norm * nv)
                      : 0.0;
  }
}

}  // namespace

FeatureMap aggregate(const FeatureMap& key, std::span<const FeatureMap> others,
                     double temperature) {
  for (const auto& o : others) {
    if (!o.same_shape(key)) throw std::invalid_argument("aggregate: feature shape mismatch");
  }
  FeatureMap out(key.grid(), key.depth());
  if (others.empty()) {
    out = key;
    return out;
  }
  std::vector<double> sims, norms, z, w(others.size() + 1);
  for (int cell = 0; cell < key.cells(); ++cell) {
    const auto k = key.cell(cell);
    member_similarities(k, std::sqrt(dot(k, k)), others, cell, sims, norms);
    z.resize(sims.size());
    for (std::size_t s = 0; s < sims.size(); ++s) z[s] = sims[s] / temperature;
    softmax(z, w);
    auto o = out.cell(cell);
    for (std::size_t d = 0; d < o.size(); ++d) o[d] = w[0] * k[d];
    for (std::size_t s = 0; s < others.size(); ++s) {
      const auto v = others[s].cell(cell);
      for (std::size_t d = 0; d < o.size(); ++d) o[d] += w[s + 1] * v[d];
    }
  }
  return out;
}

void aggregate_backward(const FeatureMap& key, std::span<const FeatureMap> others,
                        double temperature, const FeatureMap& d_out,
                        FeatureMap& d_key, std::span<FeatureMap> d_others) {
  if (d_others.size() != others.size()) {
    throw std::invalid_argument("aggregate_backward: gradient buffer count mismatch");
  }
  if (others.empty()) {
    for (std::size_t i = 0; i < d_key.data().size(); ++i) d_key.data()[i] += d_out.data()[i];
    return;
  }
  std::vector<double> sims, norms, z, w(others.size() + 1), gw(others.size() + 1);
  for (int cell = 0; cell < key.cells(); ++cell) {
    const auto k = key.cell(cell);
    const auto g = d_out.cell(cell);
    auto dk = d_key.cell(cell);
    const double nk = std::sqrt(dot(k, k));
    member_similarities(k, nk, others, cell, sims, norms);
    z.resize(sims.size());
    for (std::size_t s = 0; s < sims.size(); ++s) z[s] = sims[s] / temperature;
    softmax(z, w);

    gw[0] = dot(g, k);
    for (std::size_t d = 0; d < dk.size(); ++d) dk[d] += w[0] * g[d];
    for (std::size_t s = 0; s < others.size(); ++s) {
      const auto v = others[s].cell(cell);
      gw[s + 1] = dot(g, v);
      auto dv = d_others[s].cell(cell);
      for (std::size_t d = 0; d < dv.size(); ++d) dv[d] += w[s + 1] * g[d];
    }
    double mean_gw = 0.0;
    for (std::size_t s = 0; s < w.size(); ++s) mean_gw += w[s] * gw[s];

    // The key's self-similarity is constant, so only s >= 1 carry cosine terms.
    for (std::size_t s = 0; s < others.size(); ++s) {
      const double nv = norms[s + 1];
      if (nk <= kNormFloor || nv <= kNormFloor) continue;
      const double ga = w[s + 1] * (gw[s + 1] - mean_gw) / temperature;
      if (ga == 0.0) continue;
      const double cs = sims[s + 1];
      const auto v = others[s].cell(cell);
      auto dv = d_others[s].cell(cell);
      const double inv = 1.0 / (nk * nv);
      for (std::size_t d = 0; d < dk.size(); ++d) {
        dk[d] += ga * (v[d] * inv - cs * k[d] / (nk * nk));
        dv[d] += ga * (k[d] * inv - cs * v[d] / (nv * nv));
      }
    }
  }
}

CellOutputs apply_head(const FeatureMap& agg, const DetectorParams& params) {
  const auto& cfg = params.config;
  if (agg.grid() != cfg.grid || agg.depth() != cfg.depth) {
    throw std::invalid_argument("apply_head: feature shape does not match params");
  }
  const int k_out = cfg.outputs();
  const int rad = cfg.head_context;
  CellOutputs out(cfg.grid, cfg.classes);
  for (int r = 0; r < cfg.grid; ++r) {
    for (int c = 0; c < cfg.grid; ++c) {
      auto o = out.cell(r * cfg.grid + c);
      std::copy(params.head_b.begin(), params.head_b.end(), o.begin());
      int slot = 0;
      for (int dr = -rad; dr <= rad; ++dr) {
        for (int dc = -rad; dc <= rad; ++dc, ++slot) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= cfg.grid || cc < 0 || cc >= cfg.grid) continue;
          const auto a = agg.cell(rr * cfg.grid + cc);
          for (int d = 0; d < cfg.depth; ++d) {
            const double ad = a[static_cast<std::size_t>(d)];
            const double* w = &params.head_w[static_cast<std::size_t>((slot * cfg.depth + d) * k_out)];
            for (int k = 0; k < k_out; ++k) o[static_cast<std::size_t>(k)] += ad * w[k];
          }
        }
      }
    }
  }
  return out;
}

DecodedBox decode_cell_box(double tx, double ty, double tw, double th, int row,
                           int col, double cell_px, double frame_w, double frame_h) {
  DecodedBox b;
  b.cx = (col + sigmoid(tx)) * cell_px;
  b.cy = (row + sigmoid(ty)) * cell_px;
  b.w = std::min(std::exp(tw) * cell_px, frame_w);
  b.h = std::min(std::exp(th) * cell_px, frame_h);
  return b;
}

std::array<double, 4> encode_cell_box(const BBox& box, int row, int col, double cell_px,
                                      double u_eps) {
  const double ux = std::clamp(box.center_x() / cell_px - col, u_eps, 1.0 - u_eps);
  const double uy = std::clamp(box.center_y() / cell_px - row, u_eps, 1.0 - u_eps);
  return {logit(ux), logit(uy), std::log(box.width() / cell_px),
          std::log(box.height() / cell_px)};
}

std::vector<Detection> decode(const CellOutputs& out, const DetectorConfig& cfg) {
  const auto lay = out.layout();
  const double cell_px = cfg.patch;
  const double fw = cfg.frame_size(), fh = cfg.frame_size();
  std::vector<Detection> dets;
  for (int cell = 0; cell < out.cells(); ++cell) {
    const auto o = out.cell(cell);
    const double obj = sigmoid(o[static_cast<std::size_t>(lay.obj())]);
    auto dist = ClassDist::from_logits(o.subspan(1, static_cast<std::size_t>(cfg.classes)));
    const double conf = obj * dist.max();
    if (conf < cfg.decode_floor) continue;
    const int row = cell / out.grid(), col = cell % out.grid();
    const auto b = decode_cell_box(o[static_cast<std::size_t>(lay.box(0))],
                                   o[static_cast<std::size_t>(lay.box(1))],
                                   o[static_cast<std::size_t>(lay.box(2))],
                                   o[static_cast<std::size_t>(lay.box(3))], row, col,
                                   cell_px, fw, fh);
    if (!(b.w > 0.0) || !(b.h > 0.0)) continue;
    dets.emplace_back(BBox(b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2),
                      std::move(dist), std::clamp(conf, 0.0, 1.0));
  }
  auto kept = nms(std::move(dets), cfg.nms_iou);
  std::vector<Detection> clipped;
  clipped.reserve(kept.size());
  for (auto& d : kept) {
    if (auto cb = clip_box(d.bbox, fw, fh)) {
      d.bbox = *cb;
      clipped.push_back(std::move(d));
    }
  }
  return clipped;
}

ForwardResult forward(const FeatureSet& set, const DetectorParams& params) {
  ForwardResult r;
  r.outputs = apply_head(aggregate(set.key, set.references, params.config.temperature), params);
  r.detections = decode(r.outputs, params.config);
  return r;
}

ForwardTrace forward_trace(const Frame& key, std::span<const Frame* const> refs,
                           const DetectorParams& params) {
  ForwardTrace t;
  t.key_frame = &key;
  t.ref_frames.assign(refs.begin(), refs.end());
  t.key = extract_features(key, params);
  for (const Frame* f : refs) t.refs.push_back(extract_features(*f, params));
  t.aggregated = aggregate(t.key, t.refs, params.config.temperature);
  t.outputs = apply_head(t.aggregated, params);
  return t;
}

namespace {

void embed_backward(const Frame& frame, const FeatureMap& feats, const FeatureMap& d_feats,
                    const DetectorParams& params, ParamGrads& grads) {
  const auto& cfg = params.config;
  const auto depth = static_cast<std::size_t>(cfg.depth);
  std::vector<double> x, dz(depth);
  for (int r = 0; r < cfg.grid; ++r) {
    for (int c = 0; c < cfg.grid; ++c) {
      const int cell = r * cfg.grid + c;
      const auto f = feats.cell(cell);
      const auto df = d_feats.cell(cell);
      bool any = false;
      for (std::size_t d = 0; d < depth; ++d) {
        dz[d] = df[d] * (1.0 - f[d] * f[d]);
        any = any || dz[d] != 0.0;
      }
      if (!any) continue;
      for (std::size_t d = 0; d < depth; ++d) grads.embed_b[d] += dz[d];
      gather_patch(frame, r, c, cfg.patch, x);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        double* gw = &grads.embed_w[i * depth];
        for (std::size_t d = 0; d < depth; ++d) gw[d] += xi * dz[d];
      }
    }
  }
}

}  // namespace

void backward(const ForwardTrace& trace, const CellOutputs& d_outputs,
              const DetectorParams& params, ParamGrads& grads) {
  const auto& cfg = params.config;
  const int k_out = cfg.outputs();
  const int rad = cfg.head_context;
  FeatureMap d_agg(cfg.grid, cfg.depth);
  bool any = false;
  for (int r = 0; r < cfg.grid; ++r) {
    for (int c = 0; c < cfg.grid; ++c) {
      const auto g = d_outputs.cell(r * cfg.grid + c);
      if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
      any = true;
      for (int k = 0; k < k_out; ++k) grads.head_b[static_cast<std::size_t>(k)] += g[static_cast<std::size_t>(k)];
      int slot = 0;
      for (int dr = -rad; dr <= rad; ++dr) {
        for (int dc = -rad; dc <= rad; ++dc, ++slot) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= cfg.grid || cc < 0 || cc >= cfg.grid) continue;
          const auto a = trace.aggregated.cell(rr * cfg.grid + cc);
          auto da = d_agg.cell(rr * cfg.grid + cc);
          for (int d = 0; d < cfg.depth; ++d) {
            const auto row = static_cast<std::size_t>((slot * cfg.depth + d) * k_out);
            const double* w = &params.head_w[row];
            double* gw = &grads.head_w[row];
            double acc = 0.0;
            for (int k = 0; k < k_out; ++k) {
              gw[k] += a[static_cast<std::size_t>(d)] * g[static_cast<std::size_t>(k)];
              acc += w[k] * g[static_cast<std::size_t>(k)];
            }
            da[static_cast<std::size_t>(d)] += acc;
          }
        }
      }
    }
  }
  if (!any) return;
  FeatureMap d_key(cfg.grid, cfg.depth);
  std::vector<FeatureMap> d_refs(trace.refs.size(), FeatureMap(cfg.grid, cfg.depth));
  aggregate_backward(trace.key, trace.refs, cfg.temperature, d_agg, d_key, d_refs);
  embed_backward(*trace.key_frame, trace.key, d_key, params, grads);
  for (std::size_t s = 0; s < trace.refs.size(); ++s) {
    embed_backward(*trace.ref_frames[s], trace.refs[s], d_refs[s], params, grads);
  }
}

GridTargets GridTargets::empty(int grid) {
  GridTargets t;
  t.grid = grid;
  const auto n = static_cast<std::size_t>(grid * grid);
  t.positive.assign(n, 0);
  t.ignore.assign(n, 0);
  t.class_id.assign(n, -1);
  t.box.assign(n, {0.0, 0.0, 0.0, 0.0});
  return t;
}

int GridTargets::num_positive() const {
  return static_cast<int>(std::count(positive.begin(), positive.end(), 1));
}

int center_cell(const BBox& box, int grid, double frame_w, double frame_h) {
  const int col = std::clamp(static_cast<int>(std::floor(box.center_x() / (frame_w / grid))), 0, grid - 1);
  const int row = std::clamp(static_cast<int>(std::floor(box.center_y() / (frame_h / grid))), 0, grid - 1);
  return row * grid + col;
}

GridTargets assign_targets(std::span<const TargetLabel> labels, int grid, double frame_w,
                           double frame_h) {
  GridTargets t = GridTargets::empty(grid);
  std::vector<double> best_area(static_cast<std::size_t>(grid * grid), -1.0);
  const double cell_px = frame_w / grid;
  for (const auto& l : labels) {
    const int cell = center_cell(l.box, grid, frame_w, frame_h);
    const auto ci = static_cast<std::size_t>(cell);
    if (l.box.area() <= best_area[ci]) continue;
    best_area[ci] = l.box.area();
    t.positive[ci] = 1;
    t.class_id[ci] = l.class_id.value_or(-1);
    t.box[ci] = encode_cell_box(l.box, cell / grid, cell % grid, cell_px, kTargetCenterEps);
  }
  return t;
}

bool LossBreakdown::all_finite() const {
  return std::isfinite(sup_cls) && std::isfinite(sup_bbox) && std::isfinite(unsup_cls) &&
         std::isfinite(unsup_bbox) && std::isfinite(unsup_soft);
}

namespace {

void check_grid(const CellOutputs& out, const GridTargets& tg) {
  if (out.grid() != tg.grid) throw std::invalid_argument("compute_losses: target grid mismatch");
}

double objectness_term(const CellOutputs& out, const GridTargets& tg, bool per_positive,
                       CellOutputs& d) {
  const int obj = out.layout().obj();
  int n = 0;
  for (int c = 0; c < out.cells(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    n += (tg.ignore[ci] && !tg.positive[ci]) ? 0 : 1;
  }
  if (n == 0) return 0.0;
  if (per_positive) n = std::max(1, tg.num_positive());
  double loss = 0.0;
  for (int c = 0; c < out.cells(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (tg.ignore[ci] && !tg.positive[ci]) continue;
    const double z = out.cell(c)[static_cast<std::size_t>(obj)];
    const double y = tg.positive[ci] ? 1.0 : 0.0;
    loss += bce_with_logits(z, y);
    d.cell(c)[static_cast<std::size_t>(obj)] += (sigmoid(z) - y) / n;
  }
  return loss / n;
}

double class_term(const CellOutputs& out, const GridTargets& tg, CellOutputs& d) {
  const int classes = out.classes();
  int m = 0;
  for (int c = 0; c < out.cells(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    m += (tg.positive[ci] && tg.class_id[ci] >= 0) ? 1 : 0;
  }
  if (m == 0) return 0.0;
  std::vector<double> p(static_cast<std::size_t>(classes));
  double loss = 0.0;
  for (int c = 0; c < out.cells(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (!tg.positive[ci] || tg.class_id[ci] < 0) continue;
    const auto logits = out.cell(c).subspan(1, static_cast<std::size_t>(classes));
    softmax(logits, p);
    const auto y = static_cast<std::size_t>(tg.class_id[ci]);
    loss -= std::log(std::max(p[y], 1e-300));
    auto g = d.cell(c).subspan(1, static_cast<std::size_t>(classes));
    for (std::size_t k = 0; k < p.size(); ++k) g[k] += (p[k] - (k == y ? 1.0 : 0.0)) / m;
  }
  return loss / m;
}

double box_term(const CellOutputs& out, const GridTargets& tg, double beta, CellOutputs& d) {
  const auto lay = out.layout();
  const int m = tg.num_positive();
  if (m == 0) return 0.0;
  double loss = 0.0;
  for (int c = 0; c < out.cells(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (!tg.positive[ci]) continue;
    for (int i = 0; i < 4; ++i) {
      const auto ki = static_cast<std::size_t>(lay.box(i));
      const double diff = out.cell(c)[ki] - tg.box[ci][static_cast<std::size_t>(i)];
      const double ad = std::abs(diff);
      if (ad < beta) {
        loss += 0.5 * diff * diff / beta;
        d.cell(c)[ki] += diff / beta / m;
      } else {
        loss += ad - 0.5 * beta;
        d.cell(c)[ki] += (diff > 0 ? 1.0 : -1.0) / m;
      }
    }
  }
  return loss / m;
}

double soft_term(const CellOutputs& out, std::span<const SoftMatch> soft,
                 const LossOptions& opt, CellOutputs& d) {
  if (soft.empty()) return 0.0;
  const int classes = out.classes();
  const double eps = opt.kl_eps;
  const double n = static_cast<double>(soft.size());
  std::vector<double> s(static_cast<std::size_t>(classes)), gs(s.size());
  double loss = 0.0;
  for (const auto& m : soft) {
    if (m.cell < 0 || m.cell >= out.cells()) {
      throw std::invalid_argument("compute_losses: soft match cell out of range");
    }
    if (static_cast<int>(m.target.size()) != classes) {
      throw std::invalid_argument("compute_losses: soft target class count mismatch");
    }
    const auto logits = out.cell(m.cell).subspan(1, static_cast<std::size_t>(classes));
    softmax(logits, s);
    double kl = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double t = m.target[i];
      if (!opt.swap_kl_arguments) {
        kl += s[i] * std::log((s[i] + eps) / (t + eps));
        gs[i] = std::log((s[i] + eps) / (t + eps)) + s[i] / (s[i] + eps);
      } else {
        kl += t * std::log((t + eps) / (s[i] + eps));
        gs[i] = -t / (s[i] + eps);
      }
    }
    loss += kl;
    const double mean_g = dot(s, gs);
    auto g = d.cell(m.cell).subspan(1, static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < s.size(); ++i) g[i] += s[i] * (gs[i] - mean_g) / n;
  }
  return loss / n;
}

}  // namespace

LossResult compute_losses(const LossInputs& in, const LossOptions& opt) {
  LossResult r;
  if (in.labeled != nullptr) {
    r.d_labeled = CellOutputs(in.labeled->grid(), in.labeled->classes());
    if (in.sup != nullptr) {
      check_grid(*in.labeled, *in.sup);
      r.losses.sup_cls = objectness_term(*in.labeled, *in.sup, opt.objectness_per_positive, r.d_labeled) +
                         class_term(*in.labeled, *in.sup, r.d_labeled);
      r.losses.sup_bbox = box_term(*in.labeled, *in.sup, opt.smooth_l1_beta, r.d_labeled);
    }
  }
  if (in.unlabeled != nullptr) {
    r.d_unlabeled = CellOutputs(in.unlabeled->grid(), in.unlabeled->classes());
    if (in.pseudo_cls != nullptr && in.pseudo_cls->num_positive() > 0) {
      check_grid(*in.unlabeled, *in.pseudo_cls);
      r.losses.unsup_cls = objectness_term(*in.unlabeled, *in.pseudo_cls, opt.objectness_per_positive,
                                           r.d_unlabeled) +
                           class_term(*in.unlabeled, *in.pseudo_cls, r.d_unlabeled);
    }
    if (in.pseudo_bbox != nullptr && in.pseudo_bbox->num_positive() > 0) {
      check_grid(*in.unlabeled, *in.pseudo_bbox);
      r.losses.unsup_bbox = objectness_term(*in.unlabeled, *in.pseudo_bbox, opt.objectness_per_positive,
                                            r.d_unlabeled) +
                            box_term(*in.unlabeled, *in.pseudo_bbox, opt.smooth_l1_beta,
                                     r.d_unlabeled);
    }
    r.losses.unsup_soft = soft_term(*in.unlabeled, in.soft, opt, r.d_unlabeled);
  } else if (!in.soft.empty()) {
    throw std::invalid_argument("compute_losses: soft matches without unlabeled outputs");
  }
  return r;
}

void sgd_step(DetectorParams& params, const ParamGrads& grads, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (!params.same_shape(grads)) throw std::invalid_argument("sgd_step: shape mismatch");
  if (!grads.all_finite()) throw DivergenceError("sgd_step: non-finite gradient");
  auto pt = params.tensors();
  const auto gt = grads.tensors();
  for (std::size_t t = 0; t < pt.size(); ++t) {
    for (std::size_t i = 0; i < pt[t].size(); ++i) pt[t][i] -= lr * gt[t][i];
  }
}

}  // namespace ssvod
