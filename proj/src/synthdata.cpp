// SPDX-License-Identifier: Apache-2.0

#include "ssvod/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace ssvod {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

void VideoSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("VideoSpec: " + m); };
  if (frames < 3) fail("frames must be >= 3");
  if (width <= 0 || height <= 0) fail("resolution must be positive");
  if (classes < 1 || classes > kMaxClasses) {
    fail("classes must be in [1, " + std::to_string(kMaxClasses) + "]");
  }
  if (min_objects < 0 || max_objects < min_objects) fail("object count range is invalid");
  if (!(min_size > 1.0) || max_size < min_size) fail("object size range is invalid");
  if (max_size > 0.5 * std::min(width, height)) {
    fail("objects larger than half the frame cannot stay in frame while moving");
  }
  if (!(max_speed >= 0.0) || max_speed > 0.25 * std::min(width, height)) {
    fail("max_speed must be in [0, frame/4]");
  }
  if (!(max_acceleration >= 0.0)) fail("max_acceleration must be >= 0");
  if (!(appearance_noise >= 0.0)) fail("appearance_noise must be >= 0");
  if (!(blur_length >= 0.0)) fail("blur_length must be >= 0");
}

std::vector<int> key_frame_indices(int frames, int n) {
  if (n <= 0 || n > frames) throw std::invalid_argument("key_frame_indices: bad count");
  std::vector<int> out;
  if (n == 1) return {frames / 2};
  for (int k = 0; k < n; ++k) {
    out.push_back(static_cast<int>(std::lround(static_cast<double>(k) * (frames - 1) / (n - 1))));
  }
  return out;
}

namespace {

enum class Shape { Rect, Ellipse, Diamond, Triangle };
enum class Texture { Solid, Stripes, Checker };

struct ClassTemplate {
  Shape shape;
  Texture texture;
  std::array<double, 3> color;
};

// Pairs (0,1) and (2,3) share a shape and a similar color and differ only in
// texture.
constexpr std::array<ClassTemplate, VideoSpec::kMaxClasses> kTemplates = {{
    {Shape::Rect, Texture::Solid, {0.85, 0.20, 0.20}},
    {Shape::Rect, Texture::Stripes, {0.85, 0.32, 0.18}},
    {Shape::Ellipse, Texture::Solid, {0.20, 0.30, 0.85}},
    {Shape::Ellipse, Texture::Checker, {0.30, 0.26, 0.82}},
    {Shape::Diamond, Texture::Solid, {0.20, 0.80, 0.30}},
    {Shape::Triangle, Texture::Solid, {0.90, 0.85, 0.20}},
}};

bool inside_shape(Shape s, double u, double v, double a, double b) {
  switch (s) {
    case Shape::Rect: return u >= -a && u < a && v >= -b && v < b;
    case Shape::Ellipse: return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    case Shape::Diamond: return std::abs(u) / a + std::abs(v) / b <= 1.0;
    case Shape::Triangle:
      return v >= -b && v < b && std::abs(u) <= a * (v + b) / (2.0 * b);
  }
  return false;
}

std::array<double, 3> texture_color(const ClassTemplate& t, const std::array<double, 3>& base,
                                    double u, double v, double a, double b) {
  double k = 1.0;
  switch (t.texture) {
    case Texture::Solid: break;
    case Texture::Stripes:
      k = (static_cast<long>(std::floor((v + b) / 2.0)) % 2 == 0) ? 1.0 : 0.6;
      break;
    case Texture::Checker:
      k = ((static_cast<long>(std::floor((u + a) / 3.0)) +
            static_cast<long>(std::floor((v + b) / 3.0))) % 2 == 0)
              ? 1.0
              : 0.55;
      break;
  }
  return {base[0] * k, base[1] * k, base[2] * k};
}

struct ObjectPlan {
  int class_id;
  double w, h;
  std::vector<std::array<double, 2>> centers;  // per frame
  std::array<double, 3> color;
};

std::vector<std::array<double, 2>> simulate(const VideoSpec& spec, double w, double h,
                                            std::array<double, 2> c, std::array<double, 2> v,
                                            std::array<double, 2> acc) {
  std::vector<std::array<double, 2>> out;
  out.reserve(static_cast<std::size_t>(spec.frames));
  const double lo[2] = {w / 2, h / 2};
  const double hi[2] = {spec.width - w / 2, spec.height - h / 2};
  for (int t = 0; t < spec.frames; ++t) {
    out.push_back(c);
    for (int k = 0; k < 2; ++k) {
      v[static_cast<std::size_t>(k)] += acc[static_cast<std::size_t>(k)];
    }
    const double speed = std::hypot(v[0], v[1]);
    if (speed > spec.max_speed && speed > 0.0) {
      v[0] *= spec.max_speed / speed;
      v[1] *= spec.max_speed / speed;
    }
    for (int k = 0; k < 2; ++k) {
      auto ki = static_cast<std::size_t>(k);
      c[ki] += v[ki];
      if (c[ki] < lo[k]) {
        c[ki] = 2 * lo[k] - c[ki];
        v[ki] = -v[ki];
      } else if (c[ki] > hi[k]) {
        c[ki] = 2 * hi[k] - c[ki];
        v[ki] = -v[ki];
      }
    }
  }
  return out;
}

bool overlaps_any(const ObjectPlan& p, const std::vector<ObjectPlan>& others) {
  constexpr double kMargin = 1.0;
  for (const auto& o : others) {
    for (std::size_t t = 0; t < p.centers.size(); ++t) {
      const double dx = std::abs(p.centers[t][0] - o.centers[t][0]);
      const double dy = std::abs(p.centers[t][1] - o.centers[t][1]);
      if (dx < (p.w + o.w) / 2 + kMargin && dy < (p.h + o.h) / 2 + kMargin) return true;
    }
  }
  return false;
}

constexpr int kSuper = 4;

BBox box_at(const ObjectPlan& p, std::size_t t) {
  return BBox(p.centers[t][0] - p.w / 2, p.centers[t][1] - p.h / 2, p.centers[t][0] + p.w / 2,
              p.centers[t][1] + p.h / 2);
}

}  // namespace

Video generate_video(const VideoSpec& spec, std::uint64_t seed, int video_index) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(video_index)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  // Background: base level plus a few low-frequency tinted sinusoids.
  const double base = uniform(0.3, 0.6);
  struct Wave {
    double fx, fy, phase, amp;
    std::array<double, 3> tint;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 3; ++k) {
    const double ang = uniform(0.0, 2 * std::numbers::pi);
    const double freq = uniform(0.05, 0.25);
    waves.push_back({freq * std::cos(ang), freq * std::sin(ang), uniform(0.0, 2 * std::numbers::pi),
                     uniform(0.02, 0.06), {uniform(0.5, 1.0), uniform(0.5, 1.0), uniform(0.5, 1.0)}});
  }

  const int n_objects = spec.min_objects +
                        static_cast<int>(u01(rng) * (spec.max_objects - spec.min_objects + 1) * 0.999999);
  std::vector<ObjectPlan> objects;
  for (int i = 0; i < n_objects; ++i) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      ObjectPlan p;
      p.class_id = static_cast<int>(u01(rng) * spec.classes * 0.999999);
      p.w = uniform(spec.min_size, spec.max_size);
      p.h = uniform(spec.min_size, spec.max_size);
      std::array<double, 2> c = {uniform(p.w / 2, spec.width - p.w / 2),
                                 uniform(p.h / 2, spec.height - p.h / 2)};
      const double speed = uniform(0.0, spec.max_speed);
      const double dir = uniform(0.0, 2 * std::numbers::pi);
      std::array<double, 2> v = {speed * std::cos(dir), speed * std::sin(dir)};
      const double amag = uniform(0.0, spec.max_acceleration);
      const double adir = uniform(0.0, 2 * std::numbers::pi);
      std::array<double, 2> acc = {amag * std::cos(adir), amag * std::sin(adir)};
      const auto& tmpl = kTemplates[static_cast<std::size_t>(p.class_id)];
      for (int ch = 0; ch < 3; ++ch) {
        p.color[static_cast<std::size_t>(ch)] =
            std::clamp(tmpl.color[static_cast<std::size_t>(ch)] + uniform(-0.05, 0.05), 0.0, 1.0);
      }
      if (spec.integer_motion) {
        p.w = std::round(p.w);
        p.h = std::round(p.h);
        c = {std::round(c[0] - p.w / 2) + p.w / 2, std::round(c[1] - p.h / 2) + p.h / 2};
        v = {std::trunc(v[0]), std::trunc(v[1])};  // keeps |v| <= max_speed
        acc = {0.0, 0.0};
      }
      p.centers = simulate(spec, p.w, p.h, c, v, acc);
      if (!overlaps_any(p, objects)) {
        objects.push_back(std::move(p));
        break;
      }
    }
  }

  Video video;
  video.motion.width = spec.width;
  video.motion.height = spec.height;
  for (int t = 0; t < spec.frames; ++t) {
    video.motion.background_offset.push_back(
        {spec.camera_velocity[0] * t, spec.camera_velocity[1] * t});
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    ObjectTrack tr;
    tr.track_id = static_cast<int>(i);
    tr.class_id = objects[i].class_id;
    for (std::size_t t = 0; t < static_cast<std::size_t>(spec.frames); ++t) {
      tr.boxes.push_back(box_at(objects[i], t));
    }
    video.motion.tracks.push_back(std::move(tr));
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (int t = 0; t < spec.frames; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    Frame f(spec.width, spec.height);
    const auto& off = video.motion.background_offset[ts];
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const double X = x + 0.5 - off[0], Y = y + 0.5 - off[1];
        for (int ch = 0; ch < 3; ++ch) {
          double v = base;
          for (const auto& w : waves) {
            v += w.amp * w.tint[static_cast<std::size_t>(ch)] * std::sin(w.fx * X + w.fy * Y + w.phase);
          }
          f.at(x, y, ch) = static_cast<float>(v);
        }
      }
    }
    for (const auto& p : objects) {
      const auto& tmpl = kTemplates[static_cast<std::size_t>(p.class_id)];
      const auto& c = p.centers[ts];
      const auto& cn = ts + 1 < p.centers.size() ? p.centers[ts + 1] : c;
      const auto& cp = ts > 0 ? p.centers[ts - 1] : c;
      const double vx = ts + 1 < p.centers.size() ? cn[0] - c[0] : c[0] - cp[0];
      const double vy = ts + 1 < p.centers.size() ? cn[1] - c[1] : c[1] - cp[1];
      const double speed = std::hypot(vx, vy);
      const double strength = std::clamp(speed / 4.0, 0.0, 1.0);
      const double smear = spec.blur_length * strength;
      const int samples = smear > 0.0 ? 7 : 1;
      const double ux = speed > 0 ? vx / speed : 0.0, uy = speed > 0 ? vy / speed : 0.0;
      const double a = p.w / 2, b = p.h / 2;
      const int x0 = std::max(0, static_cast<int>(std::floor(c[0] - a - smear)) - 1);
      const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(c[0] + a + smear)) + 1);
      const int y0 = std::max(0, static_cast<int>(std::floor(c[1] - b - smear)) - 1);
      const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(c[1] + b + smear)) + 1);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          // 4x4 supersampling per smear sample; alpha is the covered fraction
          int hits = 0;
          std::array<double, 3> acc = {0, 0, 0};
          for (int s = 0; s < samples; ++s) {
            const double shift = samples == 1 ? 0.0 : smear * (static_cast<double>(s) / (samples - 1) - 0.5);
            for (int sy = 0; sy < kSuper; ++sy) {
              for (int sx = 0; sx < kSuper; ++sx) {
                const double u = x + (sx + 0.5) / kSuper - (c[0] + shift * ux);
                const double v = y + (sy + 0.5) / kSuper - (c[1] + shift * uy);
                if (!inside_shape(tmpl.shape, u, v, a, b)) continue;
                ++hits;
                const auto col = texture_color(tmpl, p.color, u, v, a, b);
                for (std::size_t ch = 0; ch < 3; ++ch) acc[ch] += col[ch];
              }
            }
          }
          if (hits == 0) continue;
          const double alpha = static_cast<double>(hits) / (samples * kSuper * kSuper);
          for (int ch = 0; ch < 3; ++ch) {
            const auto chs = static_cast<std::size_t>(ch);
            const double col = acc[chs] / hits;
            f.at(x, y, ch) = static_cast<float>((1.0 - alpha) * f.at(x, y, ch) + alpha * col);
          }
        }
      }
    }
    if (spec.appearance_noise > 0.0) {
      for (float& v : f.data()) v += static_cast<float>(spec.appearance_noise * noise(rng));
    }
    for (float& v : f.data()) v = std::clamp(v, 0.0f, 1.0f);
    quantize_8bit(f);
    video.frames.push_back(std::move(f));

    std::vector<Annotation> ann;
    for (const auto& tr : video.motion.tracks) {
      if (auto cb = clip_box(tr.boxes[ts], spec.width, spec.height)) {
        ann.push_back({tr.class_id, *cb, tr.track_id});
      }
    }
    video.annotations.push_back(std::move(ann));
  }
  return video;
}

Dataset generate_dataset(const VideoSpec& spec, int num_videos, std::uint64_t seed, int threads) {
  spec.validate();
  if (num_videos <= 0) throw std::invalid_argument("generate_dataset: num_videos must be > 0");
  Dataset ds;
  ds.spec = spec;
  ds.seed = seed;
  ds.videos.resize(static_cast<std::size_t>(num_videos));
  const int workers = std::clamp(threads, 1, num_videos);
  auto work = [&](int start) {
    for (int v = start; v < num_videos; v += workers) {
      ds.videos[static_cast<std::size_t>(v)] = generate_video(spec, seed, v);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  SparsityPlan plan;
  plan.key_frames = std::min(plan.key_frames, spec.frames);
  plan.seed = seed;
  const auto splits = sample_sparsity(ds, plan);
  for (std::size_t v = 0; v < ds.videos.size(); ++v) {
    ds.videos[v].key_frames = splits[v].key_frames;
    ds.videos[v].labeled = splits[v].labeled;
  }
  return ds;
}

namespace {

json spec_json(const VideoSpec& s) {
  return {{"frames", s.frames},
          {"width", s.width},
          {"height", s.height},
          {"classes", s.classes},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"min_size", s.min_size},
          {"max_size", s.max_size},
          {"max_speed", s.max_speed},
          {"max_acceleration", s.max_acceleration},
          {"appearance_noise", s.appearance_noise},
          {"blur_length", s.blur_length},
          {"camera_velocity", s.camera_velocity},
          {"integer_motion", s.integer_motion}};
}

VideoSpec spec_from(const json& j) {
  VideoSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "frames") s.frames = it->get<int>();
    else if (k == "width") s.width = it->get<int>();
    else if (k == "height") s.height = it->get<int>();
    else if (k == "classes") s.classes = it->get<int>();
    else if (k == "min_objects") s.min_objects = it->get<int>();
    else if (k == "max_objects") s.max_objects = it->get<int>();
    else if (k == "min_size") s.min_size = it->get<double>();
    else if (k == "max_size") s.max_size = it->get<double>();
    else if (k == "max_speed") s.max_speed = it->get<double>();
    else if (k == "max_acceleration") s.max_acceleration = it->get<double>();
    else if (k == "appearance_noise") s.appearance_noise = it->get<double>();
    else if (k == "blur_length") s.blur_length = it->get<double>();
    else if (k == "camera_velocity") s.camera_velocity = it->get<std::array<double, 2>>();
    else if (k == "integer_motion") s.integer_motion = it->get<bool>();
    else throw std::invalid_argument("VideoSpec: unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

std::string video_dir_name(int v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video_%04d", v);
  return buf;
}

std::string frame_file_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.ppm", t);
  return buf;
}

std::string hex64(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json box_json(const BBox& b) { return json::array({b.x1(), b.y1(), b.x2(), b.y2()}); }

}  // namespace

std::string spec_to_json(const VideoSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

VideoSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("VideoSpec: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("VideoSpec: expected an object");
  try {
    return spec_from(j);
  } catch (const json::type_error& e) {
    throw std::invalid_argument(std::string("VideoSpec: ") + e.what());
  }
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json checksums = json::array();
  for (int v = 0; v < ds.num_videos(); ++v) {
    const auto& video = ds.videos[static_cast<std::size_t>(v)];
    const fs::path vdir = dir / video_dir_name(v);
    fs::create_directories(vdir);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t t = 0; t < video.frames.size(); ++t) {
      const auto bytes = encode_ppm(video.frames[t]);
      h = fnv1a64(bytes, h);
      write_file_bytes(vdir / frame_file_name(static_cast<int>(t)), bytes);
    }
    checksums.push_back(hex64(h));

    json frames = json::array();
    for (const auto& anns : video.annotations) {
      json boxes = json::array();
      for (const auto& a : anns) {
        boxes.push_back({{"class", a.class_id}, {"track", a.track_id}, {"x1", a.bbox.x1()},
                         {"y1", a.bbox.y1()}, {"x2", a.bbox.x2()}, {"y2", a.bbox.y2()}});
      }
      frames.push_back({{"boxes", boxes}});
    }
    json ann = {{"frames", frames}, {"key_frames", video.key_frames}, {"labeled", video.labeled}};
    write_text_file(vdir / "annotations.json", ann.dump(1) + "\n");

    json tracks = json::array();
    for (const auto& tr : video.motion.tracks) {
      json boxes = json::array();
      for (const auto& b : tr.boxes) boxes.push_back(box_json(b));
      tracks.push_back({{"track", tr.track_id}, {"class", tr.class_id}, {"boxes", boxes}});
    }
    json motion = {{"width", video.motion.width},
                   {"height", video.motion.height},
                   {"background_offset", video.motion.background_offset},
                   {"tracks", tracks}};
    write_text_file(vdir / "motion.json", motion.dump(1) + "\n");
  }
  json meta = {{"M", ds.num_videos()},
               {"N", ds.spec.frames},
               {"H", ds.spec.height},
               {"W", ds.spec.width},
               {"C", ds.spec.classes},
               {"seed", ds.seed},
               {"spec", spec_json(ds.spec)},
               {"checksums", checksums}};
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) {
    throw std::runtime_error("dataset: missing " + (dir / "meta.json").string());
  }
  const json meta = json::parse(read_text_file(dir / "meta.json"));
  Dataset ds;
  ds.spec = spec_from(meta.at("spec"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  const int m = meta.at("M").get<int>();
  const auto& checksums = meta.at("checksums");
  for (int v = 0; v < m; ++v) {
    const fs::path vdir = dir / video_dir_name(v);
    Video video;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int t = 0; t < ds.spec.frames; ++t) {
      const fs::path fp = vdir / frame_file_name(t);
      if (!fs::exists(fp)) throw std::runtime_error("dataset: missing frame " + fp.string());
      const auto bytes = read_file_bytes(fp);
      h = fnv1a64(bytes, h);
      video.frames.push_back(decode_ppm(bytes));
    }
    if (hex64(h) != checksums.at(static_cast<std::size_t>(v)).get<std::string>()) {
      throw std::runtime_error("dataset: checksum mismatch in " + vdir.string());
    }
    const json ann = json::parse(read_text_file(vdir / "annotations.json"));
    for (const auto& fr : ann.at("frames")) {
      std::vector<Annotation> anns;
      for (const auto& b : fr.at("boxes")) {
        anns.push_back({b.at("class").get<int>(),
                        BBox(b.at("x1").get<double>(), b.at("y1").get<double>(),
                             b.at("x2").get<double>(), b.at("y2").get<double>()),
                        b.value("track", -1)});
      }
      video.annotations.push_back(std::move(anns));
    }
    video.key_frames = ann.at("key_frames").get<std::vector<int>>();
    video.labeled = ann.at("labeled").get<std::vector<int>>();

    const json mo = json::parse(read_text_file(vdir / "motion.json"));
    video.motion.width = mo.at("width").get<int>();
    video.motion.height = mo.at("height").get<int>();
    video.motion.background_offset =
        mo.at("background_offset").get<std::vector<std::array<double, 2>>>();
    for (const auto& tj : mo.at("tracks")) {
      ObjectTrack tr;
      tr.track_id = tj.at("track").get<int>();
      tr.class_id = tj.at("class").get<int>();
      for (const auto& b : tj.at("boxes")) {
        tr.boxes.emplace_back(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                              b.at(3).get<double>());
      }
      video.motion.tracks.push_back(std::move(tr));
    }
    ds.videos.push_back(std::move(video));
  }
  return ds;
}

void SparsityPlan::validate(int frames) const {
  if (key_frames <= 0 || key_frames > frames) {
    throw std::invalid_argument("SparsityPlan: key_frames must be in [1, frames]");
  }
  if (labeled_key_frames < 0 || labeled_key_frames > key_frames) {
    throw std::invalid_argument("SparsityPlan: labeled key frames (" +
                                std::to_string(labeled_key_frames) + ") exceed key frames (" +
                                std::to_string(key_frames) + ")");
  }
  if (unlabeled_key_frames < -1) throw std::invalid_argument("SparsityPlan: bad unlabeled cap");
  if (!(labeled_video_fraction >= 0.0 && labeled_video_fraction <= 1.0)) {
    throw std::invalid_argument("SparsityPlan: labeled_video_fraction must be in [0,1]");
  }
}

std::vector<VideoSplit> sample_sparsity(const Dataset& ds, const SparsityPlan& plan) {
  plan.validate(ds.spec.frames);
  std::mt19937_64 rng(derive_seed(plan.seed, 0x5a5a));
  const int m = ds.num_videos();
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const int n_labeled_videos = static_cast<int>(std::lround(plan.labeled_video_fraction * m));
  std::vector<char> has_labels(static_cast<std::size_t>(m), 0);
  for (int i = 0; i < n_labeled_videos; ++i) has_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  const auto keys = key_frame_indices(ds.spec.frames, plan.key_frames);
  std::vector<VideoSplit> out;
  for (int v = 0; v < m; ++v) {
    VideoSplit s;
    std::vector<int> pool = keys;
    std::shuffle(pool.begin(), pool.end(), rng);
    const int nl = has_labels[static_cast<std::size_t>(v)] ? plan.labeled_key_frames : 0;
    s.labeled.assign(pool.begin(), pool.begin() + nl);
    s.unlabeled.assign(pool.begin() + nl, pool.end());
    if (plan.unlabeled_key_frames >= 0 &&
        static_cast<int>(s.unlabeled.size()) > plan.unlabeled_key_frames) {
      s.unlabeled.resize(static_cast<std::size_t>(plan.unlabeled_key_frames));
    }
    std::sort(s.labeled.begin(), s.labeled.end());
    std::sort(s.unlabeled.begin(), s.unlabeled.end());
    s.key_frames = s.labeled;
    s.key_frames.insert(s.key_frames.end(), s.unlabeled.begin(), s.unlabeled.end());
    std::sort(s.key_frames.begin(), s.key_frames.end());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<int> all_offsets(int range) {
  std::vector<int> out;
  for (int j = -range; j <= range; ++j) {
    if (j != 0) out.push_back(j);
  }
  return out;
}

std::vector<int> draw_offsets(int count, int range, std::mt19937_64& rng) {
  if (range < 1) throw std::invalid_argument("draw_offsets: range must be >= 1");
  const auto all = all_offsets(range);
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(all[pick(rng)]);
  return out;
}

std::vector<int> resolve_offsets(int t, int frames, std::span<const int> offsets, int range,
                                 std::mt19937_64& rng) {
  if (t < 0 || t >= frames) throw std::out_of_range("resolve_offsets: bad frame index");
  std::vector<int> valid;
  for (int j : all_offsets(range)) {
    if (t + j >= 0 && t + j < frames) valid.push_back(j);
  }
  std::vector<int> out;
  for (int j : offsets) {
    if (j == 0) throw std::invalid_argument("resolve_offsets: offset 0 is the key frame");
    if (t + j >= 0 && t + j < frames) {
      out.push_back(j);
      continue;
    }
    if (valid.empty()) throw std::invalid_argument("resolve_offsets: no valid reference offsets");
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    out.push_back(valid[pick(rng)]);
  }
  return out;
}

VideoClip load_clip(const Dataset& ds, int video, int t, std::span<const int> offsets, int range,
                    std::mt19937_64& rng) {
  if (video < 0 || video >= ds.num_videos()) throw std::out_of_range("load_clip: bad video index");
  const auto& vid = ds.videos[static_cast<std::size_t>(video)];
  const int n = static_cast<int>(vid.frames.size());
  if (t < 0 || t >= n) throw std::out_of_range("load_clip: bad frame index");
  VideoClip clip;
  clip.video = video;
  clip.key_index = t;
  clip.key = vid.frames[static_cast<std::size_t>(t)];
  clip.annotations = vid.annotations[static_cast<std::size_t>(t)];
  clip.offsets = resolve_offsets(t, n, offsets, range, rng);
  for (int k : clip.offsets) clip.refs.push_back(vid.frames[static_cast<std::size_t>(t + k)]);
  return clip;
}

}  // namespace ssvod
