// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural subjects and motions: textured shapes on smooth seeded
// backgrounds, exact footprint masks, analytic trajectories, and templated
// captions.

#pragma once

#include <filesystem>
#include <iomanip>
#include <numbers>
#include <variant>

#include <nlohmann/json.hpp>

#include "smra/stns.hpp"
#include "smra/toyvae.hpp"

namespace smra::data {

enum class Shape { Circle, Square, Triangle };

inline std::string to_string(Shape s) {
  switch (s) {
    case Shape::Circle: return "circle";
    case Shape::Square: return "square";
    default: return "triangle";
  }
}

inline Shape parse_shape(std::string_view s) {
  if (s == "circle") return Shape::Circle;
  if (s == "square") return Shape::Square;
  if (s == "triangle") return Shape::Triangle;
  throw Error(ErrorCode::BadSpec, "unknown shape '" + std::string(s) + "'");
}

using Rgb = std::array<double, 3>;

struct SubjectSpec {
  Shape shape = Shape::Circle;
  Rgb fill_color{0.9, 0.3, 0.2};
  std::uint64_t texture_seed = 0;
  double size = 0.3;  // diameter of the bounding circle as a fraction of width
  std::string color_name;

  void validate() const {
    if (!(size > 0.1 && size < 0.6)) throw Error(ErrorCode::BadSpec, "subject size must lie in (0.1, 0.6)");
    for (double c : fill_color)
      if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorCode::BadSpec, "fill color outside [0,1]");
  }
};

struct Linear {
  double vx = 1.0, vy = 0.0;  // px per frame
};
struct Circular {
  double radius = 5.0;
  double angular_rate = 0.0;  // rad per frame; 0 selects one full turn over the clip
};
struct Rotation {
  double angular_rate = std::numbers::pi / 16;  // rad per frame
};

using Trajectory = std::variant<Linear, Circular, Rotation>;

struct MotionSpec {
  Trajectory trajectory = Linear{};
  std::size_t frames = 17;
  std::string name;  // caption word; derived from the trajectory when empty

  void validate() const {
    if (frames < 1 || (frames - 1) % toyvae::kTime != 0)
      throw Error(ErrorCode::BadFrameCount, std::to_string(frames) + " frames; need T = 1 (mod 4)");
  }
};

inline std::string motion_name(const MotionSpec& m) {
  if (!m.name.empty()) return m.name;
  if (const auto* l = std::get_if<Linear>(&m.trajectory)) {
    if (l->vx == 0 && l->vy == 0) return "still";
    if (std::abs(l->vx) >= std::abs(l->vy)) return l->vx > 0 ? "moving-right" : "moving-left";
    return l->vy > 0 ? "moving-down" : "moving-up";
  }
  if (std::holds_alternative<Circular>(m.trajectory)) return "circling";
  return "spinning";
}

struct Pose {
  double cx, cy, angle;
};

struct Sample {
  Tensor<float> video;  // [T,H,W,3]
  Tensor<float> mask;   // [T,H,W]
  std::string caption;
  std::vector<Pose> trajectory;
  nlohmann::json ground_truth;
};

namespace detail {

inline double radius_px(const SubjectSpec& s, std::size_t w) { return s.size * static_cast<double>(w) / 2.0; }

// Footprint test in object-local coordinates (lx, ly) for bounding radius r.
inline bool inside(Shape shape, double lx, double ly, double r) {
  switch (shape) {
    case Shape::Circle: return lx * lx + ly * ly <= r * r;
    case Shape::Square: {
      const double a = r / std::numbers::sqrt2;
      return std::abs(lx) <= a && std::abs(ly) <= a;
    }
    default: {
      // Equilateral triangle with circumradius r, apex up (negative y).
      for (int k = 0; k < 3; ++k) {
        const double th = -std::numbers::pi / 2 + k * 2 * std::numbers::pi / 3 + std::numbers::pi / 3;
        if (lx * std::cos(th) + ly * std::sin(th) > r / 2) return false;
      }
      return true;
    }
  }
}

struct Wave {
  double fx, fy, phase, amp;
};

inline std::vector<Wave> waves(std::uint64_t seed, std::size_t n, double fmin, double fmax) {
  Rng rng(seed);
  std::uniform_real_distribution<double> f(fmin, fmax), ph(0, 2 * std::numbers::pi), sg(-1, 1);
  std::vector<Wave> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double ang = ph(rng);
    const double mag = f(rng);
    out.push_back({mag * std::cos(ang), mag * std::sin(ang), ph(rng), 1.0 / static_cast<double>(n)});
  }
  return out;
}

inline double eval_waves(const std::vector<Wave>& ws, double x, double y) {
  double s = 0;
  for (const auto& w : ws) s += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
  return s;
}

struct Scene {
  std::vector<Wave> background[3];
  std::vector<Wave> texture;
};

inline Scene make_scene(const SubjectSpec& s, std::uint64_t seed) {
  Scene sc;
  for (int c = 0; c < 3; ++c) sc.background[c] = waves(derive_seed(seed, "data.background." + std::to_string(c)), 3, 0.1, 0.35);
  sc.texture = waves(derive_seed(s.texture_seed, "data.texture"), 3, 0.6, 1.2);
  return sc;
}

inline void render_frame(const SubjectSpec& s, const Scene& sc, const Pose& pose, std::size_t h, std::size_t w,
                         float* rgb, float* mask) {
  const double r = radius_px(s, w);
  const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dx = px - pose.cx, dy = py - pose.cy;
      const double lx = ca * dx + sa * dy, ly = -sa * dx + ca * dy;
      const bool in = inside(s.shape, lx, ly, r);
      float* o = rgb + (y * w + x) * 3;
      if (in) {
        const double tex = 0.7 + 0.3 * eval_waves(sc.texture, lx, ly);
        for (int c = 0; c < 3; ++c) o[c] = static_cast<float>(std::clamp(s.fill_color[c] * tex, 0.0, 1.0));
      } else {
        for (int c = 0; c < 3; ++c)
          o[c] = static_cast<float>(std::clamp(0.5 + 0.12 * eval_waves(sc.background[c], px, py), 0.0, 1.0));
      }
      mask[y * w + x] = in ? 1.0f : 0.0f;
    }
}

inline void check_in_frame(const SubjectSpec& s, const Pose& p, std::size_t h, std::size_t w) {
  const double r = radius_px(s, w);
  if (p.cx - r < 0 || p.cy - r < 0 || p.cx + r > static_cast<double>(w) || p.cy + r > static_cast<double>(h))
    throw Error(ErrorCode::BadSpec, "object leaves the frame");
}

inline nlohmann::json spec_json(const SubjectSpec& s) {
  return {{"shape", to_string(s.shape)},
          {"fill_color", s.fill_color},
          {"texture_seed", s.texture_seed},
          {"size", s.size},
          {"color_name", s.color_name}};
}

inline nlohmann::json trajectory_json(const MotionSpec& m) {
  nlohmann::json j{{"frames", m.frames}, {"name", motion_name(m)}};
  std::visit(
      [&](const auto& t) {
        using V = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<V, Linear>) {
          j["type"] = "linear";
          j["velocity"] = {t.vx, t.vy};
        } else if constexpr (std::is_same_v<V, Circular>) {
          j["type"] = "circular";
          j["radius"] = t.radius;
          j["angular_rate"] = t.angular_rate;
        } else {
          j["type"] = "rotation";
          j["angular_rate"] = t.angular_rate;
        }
      },
      m.trajectory);
  return j;
}

inline nlohmann::json poses_json(const std::vector<Pose>& ps) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : ps) a.push_back({p.cx, p.cy, p.angle});
  return a;
}

}  // namespace detail

inline void check_resolution(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h % toyvae::kSpace || w % toyvae::kSpace)
    throw Error(ErrorCode::BadResolution, std::to_string(h) + "x" + std::to_string(w));
}

/// Still image of the subject at the frame center; caption "A picture of V* <shape>".
inline Sample gen_subject(const SubjectSpec& spec, std::size_t h, std::size_t w, std::uint64_t seed) {
  spec.validate();
  check_resolution(h, w);
  const Pose pose{static_cast<double>(w) / 2, static_cast<double>(h) / 2, 0.0};
  detail::check_in_frame(spec, pose, h, w);
  const auto scene = detail::make_scene(spec, seed);
  Sample s{Tensor<float>({1, h, w, 3}), Tensor<float>({1, h, w}), "A picture of V* " + to_string(spec.shape), {pose}, {}};
  detail::render_frame(spec, scene, pose, h, w, s.video.data(), s.mask.data());
  s.ground_truth = {{"kind", "subject"}, {"subject", detail::spec_json(spec)}, {"seed", seed},
                    {"trajectory", detail::poses_json(s.trajectory)}};
  return s;
}

/// Poses of the object center over the clip; paths are centered on the frame.
inline std::vector<Pose> trajectory_poses(const MotionSpec& m, std::size_t h, std::size_t w) {
  const double cx = static_cast<double>(w) / 2, cy = static_cast<double>(h) / 2;
  const double mid = static_cast<double>(m.frames - 1) / 2;
  std::vector<Pose> out;
  for (std::size_t f = 0; f < m.frames; ++f) {
    const double k = static_cast<double>(f);
    std::visit(
        [&](const auto& t) {
          using V = std::decay_t<decltype(t)>;
          if constexpr (std::is_same_v<V, Linear>) {
            out.push_back({cx + t.vx * (k - mid), cy + t.vy * (k - mid), 0.0});
          } else if constexpr (std::is_same_v<V, Circular>) {
            const double rate = t.angular_rate != 0.0 ? t.angular_rate
                                                      : 2 * std::numbers::pi / std::max(1.0, static_cast<double>(m.frames - 1));
            out.push_back({cx + t.radius * std::cos(rate * k), cy + t.radius * std::sin(rate * k), 0.0});
          } else {
            out.push_back({cx, cy, t.angular_rate * k});
          }
        },
        m.trajectory);
  }
  return out;
}

/// Video of the subject along the trajectory; caption "A <shape> S* <motion>".
inline Sample gen_motion(const MotionSpec& motion, const SubjectSpec& subject, std::size_t h, std::size_t w,
                         std::uint64_t seed) {
  subject.validate();
  motion.validate();
  check_resolution(h, w);
  const auto poses = trajectory_poses(motion, h, w);
  for (const auto& p : poses) detail::check_in_frame(subject, p, h, w);
  const auto scene = detail::make_scene(subject, seed);
  const std::size_t t = motion.frames;
  Sample s{Tensor<float>({t, h, w, 3}), Tensor<float>({t, h, w}),
           "A " + to_string(subject.shape) + " S* " + motion_name(motion), poses, {}};
  for (std::size_t f = 0; f < t; ++f)
    detail::render_frame(subject, scene, poses[f], h, w, s.video.data() + f * h * w * 3, s.mask.data() + f * h * w);
  s.ground_truth = {{"kind", "motion"},
                    {"subject", detail::spec_json(subject)},
                    {"motion", detail::trajectory_json(motion)},
                    {"seed", seed},
                    {"trajectory", detail::poses_json(poses)}};
  return s;
}

/// Centroid (x, y) of mask frame f in pixel-center coordinates.
inline std::array<double, 2> mask_centroid(const Tensor<float>& mask, std::size_t f) {
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  double sx = 0, sy = 0, n = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (mask[(f * h + y) * w + x] != 0.0f) {
        sx += static_cast<double>(x) + 0.5;
        sy += static_cast<double>(y) + 0.5;
        n += 1;
      }
  return {sx / n, sy / n};
}

// ---------------------------------------------------------------- corpus

struct Palette {
  std::string name;
  Rgb rgb;
};

inline const std::vector<Palette>& palette() {
  static const std::vector<Palette> p{{"red", {0.90, 0.20, 0.15}},   {"blue", {0.20, 0.35, 0.95}},
                                      {"green", {0.20, 0.85, 0.30}}, {"yellow", {0.95, 0.90, 0.20}},
                                      {"purple", {0.65, 0.25, 0.85}}, {"orange", {0.95, 0.55, 0.10}},
                                      {"cyan", {0.15, 0.85, 0.90}},  {"white", {0.95, 0.95, 0.95}}};
  return p;
}

/// The eight corpus subjects: shapes cycle while colors run through the palette.
inline std::vector<SubjectSpec> corpus_subjects(std::uint64_t seed, std::size_t count = 8) {
  std::vector<SubjectSpec> out;
  const Shape shapes[3] = {Shape::Circle, Shape::Square, Shape::Triangle};
  for (std::size_t i = 0; i < count; ++i) {
    const auto& c = palette()[i % palette().size()];
    out.push_back({shapes[i % 3], c.rgb, derive_seed(seed, "data.subject." + std::to_string(i)), 0.3, c.name});
  }
  return out;
}

inline std::vector<MotionSpec> corpus_motions(std::size_t frames) {
  return {{Linear{1.0, 0.0}, frames, ""},  {Linear{-1.0, 0.0}, frames, ""}, {Linear{0.0, -1.0}, frames, ""},
          {Linear{0.0, 1.0}, frames, ""},  {Circular{4.0, 0.0}, frames, ""}, {Rotation{}, frames, ""}};
}

/// Scales linear speeds so the path fits a frame of width w for subject size.
inline MotionSpec fit_motion(MotionSpec m, const SubjectSpec& s, std::size_t h, std::size_t w) {
  if (auto* l = std::get_if<Linear>(&m.trajectory)) {
    const double room = std::min(static_cast<double>(w), static_cast<double>(h)) - 2 * detail::radius_px(s, w);
    const double span = static_cast<double>(m.frames - 1);
    const double speed = std::hypot(l->vx, l->vy);
    if (span > 0 && speed * span > room) {
      const double k = room / (speed * span);
      l->vx *= k;
      l->vy *= k;
    }
  }
  return m;
}

struct CorpusItem {
  Sample sample;
  std::string id;
};

/// Pretraining corpus: every subject under every motion with caption
/// "A <color> <shape> <motion>", plus one still per subject captioned
/// "A picture of a <color> <shape>".
inline std::vector<CorpusItem> gen_corpus(std::size_t h, std::size_t w, std::size_t frames, std::uint64_t seed,
                                          std::size_t n_subjects = 8) {
  std::vector<CorpusItem> out;
  const auto subjects = corpus_subjects(seed, n_subjects);
  const auto motions = corpus_motions(frames);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    for (std::size_t j = 0; j < motions.size(); ++j) {
      const auto m = fit_motion(motions[j], s, h, w);
      Sample smp = gen_motion(m, s, h, w, derive_seed(seed, i * 64 + j));
      smp.caption = "A " + s.color_name + " " + to_string(s.shape) + " " + motion_name(m);
      out.push_back({std::move(smp), "s" + std::to_string(i) + "_m" + std::to_string(j)});
    }
    Sample still = gen_subject(s, h, w, derive_seed(seed, i * 64 + 63));
    still.caption = "A picture of a " + s.color_name + " " + to_string(s.shape);
    out.push_back({std::move(still), "s" + std::to_string(i) + "_still"});
  }
  return out;
}

// ---------------------------------------------------------------- persistence

inline void save_sample(const Sample& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::save_stns(dir / "video.stns", s.video);
  io::save_stns(dir / "mask.stns", s.mask);
  nlohmann::json j = s.ground_truth;
  j["caption"] = s.caption;
  io::write_file(dir / "sample.json", j.dump(2));
}

inline Sample load_sample(const std::filesystem::path& dir) {
  Sample s;
  s.video = io::load_stns<float>(dir / "video.stns");
  s.mask = io::load_stns<float>(dir / "mask.stns");
  s.ground_truth = nlohmann::json::parse(io::read_file(dir / "sample.json"));
  s.caption = s.ground_truth.at("caption").get<std::string>();
  s.ground_truth.erase("caption");
  for (const auto& p : s.ground_truth.at("trajectory")) s.trajectory.push_back({p[0], p[1], p[2]});
  return s;
}

/// Writes every item under dir/<id>/ and a corpus.json manifest with hashes.
inline std::string save_corpus(const std::vector<CorpusItem>& items, const std::filesystem::path& dir) {
  nlohmann::json m;
  m["items"] = nlohmann::json::array();
  std::string all;
  for (const auto& it : items) {
    save_sample(it.sample, dir / it.id);
    const std::string h = io::content_hash(io::encode_stns(it.sample.video) + io::encode_stns(it.sample.mask) +
                                           it.sample.caption);
    all += h;
    m["items"].push_back({{"id", it.id}, {"caption", it.sample.caption}, {"hash", h}});
  }
  m["hash"] = io::content_hash(all);
  io::write_file(dir / "corpus.json", m.dump(2));
  return m["hash"].get<std::string>();
}

inline std::vector<CorpusItem> load_corpus(const std::filesystem::path& dir) {
  const auto m = nlohmann::json::parse(io::read_file(dir / "corpus.json"));
  std::vector<CorpusItem> out;
  for (const auto& it : m.at("items")) {
    const auto id = it.at("id").get<std::string>();
    out.push_back({load_sample(dir / id), id});
  }
  return out;
}

inline std::string corpus_hash(const std::vector<CorpusItem>& items) {
  std::string all;
  for (const auto& it : items)
    all += io::content_hash(io::encode_stns(it.sample.video) + io::encode_stns(it.sample.mask) + it.sample.caption);
  return io::content_hash(all);
}

}  // namespace smra::data
