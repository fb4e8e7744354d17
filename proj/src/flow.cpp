// SPDX-License-Identifier: Apache-2.0

#include "ssvod/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

namespace ssvod {

FlowField::FlowField(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("FlowField: dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 2,
               0.0f);
}

FlowField FlowField::flipped_horizontal() const {
  FlowField out(width_, height_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      out.set(width_ - 1 - x, y, -dx(x, y), dy(x, y));
    }
  }
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_flow(const FlowField& flow) {
  std::vector<std::uint8_t> out = {'S', 'V', 'F', 'L'};
  put_u32(out, static_cast<std::uint32_t>(flow.width()));
  put_u32(out, static_cast<std::uint32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      put_u32(out, std::bit_cast<std::uint32_t>(flow.dx(x, y)));
      put_u32(out, std::bit_cast<std::uint32_t>(flow.dy(x, y)));
    }
  }
  return out;
}

FlowField deserialize_flow(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SVFL", 4) != 0) {
    throw std::runtime_error("flow blob: bad magic");
  }
  const auto w = get_u32(bytes, 4);
  const auto h = get_u32(bytes, 8);
  if (bytes.size() != 12 + static_cast<std::size_t>(w) * h * 8) {
    throw std::runtime_error("flow blob: size does not match header");
  }
  FlowField flow(static_cast<int>(w), static_cast<int>(h));
  std::size_t pos = 12;
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      const float dx = std::bit_cast<float>(get_u32(bytes, pos));
      const float dy = std::bit_cast<float>(get_u32(bytes, pos + 4));
      flow.set(x, y, dx, dy);
      pos += 8;
    }
  }
  return flow;
}

CellFlow CellFlow::zeros(int grid) {
  CellFlow f;
  f.grid = grid;
  f.disp.assign(static_cast<std::size_t>(grid * grid), {0.0, 0.0});
  return f;
}

FeatureMap::FeatureMap(int grid, int depth) : grid_(grid), depth_(depth) {
  if (grid <= 0 || depth <= 0) {
    throw std::invalid_argument("FeatureMap: grid and depth must be positive");
  }
  data_.assign(static_cast<std::size_t>(grid * grid * depth), 0.0);
}

FlowField analytic_flow(const MotionTruth& truth, int t, int offset,
                        double noise_sigma, std::mt19937_64* rng) {
  const int n = truth.frames();
  if (t < 0 || t >= n || t + offset < 0 || t + offset >= n) {
    throw std::out_of_range("analytic_flow: frame index out of range (t=" +
                            std::to_string(t) + ", offset=" +
                            std::to_string(offset) + ", frames=" +
                            std::to_string(n) + ")");
  }
  const int r = t + offset;
  const auto& bg0 = truth.background_offset[static_cast<std::size_t>(t)];
  const auto& bg1 = truth.background_offset[static_cast<std::size_t>(r)];
  const auto bgx = static_cast<float>(bg1[0] - bg0[0]);
  const auto bgy = static_cast<float>(bg1[1] - bg0[1]);

  FlowField flow(truth.width, truth.height);
  for (int y = 0; y < truth.height; ++y) {
    for (int x = 0; x < truth.width; ++x) flow.set(x, y, bgx, bgy);
  }
  for (const auto& track : truth.tracks) {
    const BBox& a = track.boxes[static_cast<std::size_t>(t)];
    const BBox& b = track.boxes[static_cast<std::size_t>(r)];
    const auto dx = static_cast<float>(b.center_x() - a.center_x());
    const auto dy = static_cast<float>(b.center_y() - a.center_y());
    const int x0 = std::max(0, static_cast<int>(std::floor(a.x1() - 0.5)));
    const int x1 = std::min(truth.width - 1, static_cast<int>(std::ceil(a.x2())));
    const int y0 = std::max(0, static_cast<int>(std::floor(a.y1() - 0.5)));
    const int y1 = std::min(truth.height - 1, static_cast<int>(std::ceil(a.y2())));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px >= a.x1() && px < a.x2() && py >= a.y1() && py < a.y2()) {
          flow.set(x, y, dx, dy);
        }
      }
    }
  }
  if (noise_sigma > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("analytic_flow: noise needs an rng");
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (int y = 0; y < truth.height; ++y) {
      for (int x = 0; x < truth.width; ++x) {
        const auto nx = static_cast<float>(noise(*rng));
        const auto ny = static_cast<float>(noise(*rng));
        flow.set(x, y, flow.dx(x, y) + nx, flow.dy(x, y) + ny);
      }
    }
  }
  return flow;
}

FlowField estimate_flow_block_matching(const Frame& key, const Frame& ref,
                                       int block, int radius) {
  if (key.width() != ref.width() || key.height() != ref.height()) {
    throw std::invalid_argument("block matching: frame size mismatch");
  }
  if (block < 3 || block % 2 == 0) {
    throw std::invalid_argument("block matching: block must be odd and >= 3");
  }
  if (radius < 1) throw std::invalid_argument("block matching: radius must be >= 1");

  const int w = key.width(), h = key.height();
  FlowField flow(w, h);
  for (int by = 0; by < h; by += block) {
    for (int bx = 0; bx < w; bx += block) {
      const int ex = std::min(bx + block, w), ey = std::min(by + block, h);
      double best = std::numeric_limits<double>::infinity();
      int best_dx = 0, best_dy = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          double ssd = 0.0;
          int count = 0;
          for (int y = by; y < ey; ++y) {
            const int ry = y + dy;
            if (ry < 0 || ry >= h) continue;
            for (int x = bx; x < ex; ++x) {
              const int rx = x + dx;
              if (rx < 0 || rx >= w) continue;
              for (int ch = 0; ch < 3; ++ch) {
                const double d = key.at(x, y, ch) - ref.at(rx, ry, ch);
                ssd += d * d;
              }
              ++count;
            }
          }
          if (count == 0) continue;
          ssd /= count;
          const bool first = std::isinf(best);
          const double tol = first ? 0.0 : 1e-12 * std::max(1.0, best);
          bool take = first || ssd < best - tol;
          if (!take && std::abs(ssd - best) <= tol) {
            const int mag = dx * dx + dy * dy;
            const int best_mag = best_dx * best_dx + best_dy * best_dy;
            take = mag < best_mag ||
                   (mag == best_mag && std::pair(dx, dy) < std::pair(best_dx, best_dy));
          }
          if (take) {
            best = ssd;
            best_dx = dx;
            best_dy = dy;
          }
        }
      }
      for (int y = by; y < ey; ++y) {
        for (int x = bx; x < ex; ++x) {
          flow.set(x, y, static_cast<float>(best_dx), static_cast<float>(best_dy));
        }
      }
    }
  }
  return flow;
}

CellFlow downsample_flow(const FlowField& flow, int grid) {
  if (grid <= 0 || flow.width() % grid != 0 || flow.height() % grid != 0) {
    throw std::invalid_argument("downsample_flow: frame not divisible by grid");
  }
  const int cw = flow.width() / grid, chh = flow.height() / grid;
  CellFlow out = CellFlow::zeros(grid);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      double sx = 0.0, sy = 0.0;
      for (int y = r * chh; y < (r + 1) * chh; ++y) {
        for (int x = c * cw; x < (c + 1) * cw; ++x) {
          sx += flow.dx(x, y);
          sy += flow.dy(x, y);
        }
      }
      const double n = static_cast<double>(cw * chh);
      out.disp[static_cast<std::size_t>(r * grid + c)] = {sx / n / cw, sy / n / chh};
    }
  }
  return out;
}

FeatureMap warp_feature(const FeatureMap& ref, const CellFlow& flow) {
  if (flow.grid != ref.grid()) {
    throw std::invalid_argument("warp_feature: flow grid does not match feature grid");
  }
  const int g = ref.grid(), depth = ref.depth();
  FeatureMap out(g, depth);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const auto d = flow.at(r, c);
      const double sx = c + d[0], sy = r + d[1];
      const double fx = std::floor(sx), fy = std::floor(sy);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double ax = sx - fx, ay = sy - fy;
      const int xs[2] = {x0, x0 + 1};
      const int ys[2] = {y0, y0 + 1};
      const double wx[2] = {1.0 - ax, ax};
      const double wy[2] = {1.0 - ay, ay};
      auto dst = out.cell(r * g + c);
      for (int iy = 0; iy < 2; ++iy) {
        for (int ix = 0; ix < 2; ++ix) {
          const double wgt = wx[ix] * wy[iy];
          if (wgt == 0.0) continue;
          if (xs[ix] < 0 || xs[ix] >= g || ys[iy] < 0 || ys[iy] >= g) continue;
          const auto src = ref.cell(ys[iy] * g + xs[ix]);
          for (int k = 0; k < depth; ++k) dst[static_cast<std::size_t>(k)] += wgt * src[static_cast<std::size_t>(k)];
        }
      }
    }
  }
  return out;
}

FeatureSets build_feature_sets(const FeatureMap& key,
                               std::span<const FeatureMap> refs,
                               std::span<const int> offsets,
                               std::span<const CellFlow> cell_flows) {
  if (refs.size() != cell_flows.size() || refs.size() != offsets.size()) {
    throw std::invalid_argument("build_feature_sets: " + std::to_string(refs.size()) +
                                " references but " +
                                std::to_string(cell_flows.size()) + " flows and " +
                                std::to_string(offsets.size()) + " offsets");
  }
  FeatureSets sets;
  sets.raw.key = key;
  sets.raw.references.assign(refs.begin(), refs.end());
  sets.raw.source = RawSource{};
  for (std::size_t j = 0; j < refs.size(); ++j) {
    if (offsets[j] == 0) {
      throw std::invalid_argument("build_feature_sets: reference offset 0");
    }
    if (!refs[j].same_shape(key)) {
      throw std::invalid_argument("build_feature_sets: feature shape mismatch");
    }
    FeatureSet s;
    s.key = warp_feature(refs[j], cell_flows[j]);
    s.references = sets.raw.references;
    s.source = FlowWarpedSource{offsets[j]};
    sets.warped.push_back(std::move(s));
  }
  return sets;
}

}  // namespace ssvod
