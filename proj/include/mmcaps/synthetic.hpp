#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmcaps/random.hpp"
#include "mmcaps/sentence.hpp"
#include "mmcaps/tensor.hpp"

namespace mmcaps {

// Procedural referring-segmentation scenes: 1-3 hard-edged colored shapes
// moving on a black background, each queryable by color/shape/action.

enum class ShapeClass { square = 0, circle = 1, triangle = 2 };
enum class ActorAction { left = 0, right, up, down, grow, shrink, still };

inline const char* shape_name(int s) {
  static const char* names[] = {"square", "circle", "triangle"};
  return names[s];
}
inline const char* color_name(int c) {
  static const char* names[] = {"red", "green", "blue", "yellow"};
  return names[c];
}
inline const char* action_phrase(int a) {
  static const char* names[] = {"moving left", "moving right", "moving up",
                                "moving down", "growing",     "shrinking",
                                "standing still"};
  return names[a];
}

constexpr int kShapeCount = 3;
constexpr int kColorCount = 4;
constexpr int kActionCount = 7;

struct SceneConfig {
  int64_t frames = 4;
  int64_t size = 64;
  int min_actors = 1;
  int max_actors = 3;
  double min_radius = 4.0;
  double max_radius = 9.0;
  // occlusion is allowed; scenes are resampled until every actor keeps at
  // least this fraction of its pixels visible in every frame
  double min_visible_fraction = 0.3;
  bool bbox_ground_truth = false;
};

struct ActorRecord {
  int shape = 0;
  int color = 0;
  int action = 0;
  double cx = 0, cy = 0, radius = 0;
  double vx = 0, vy = 0, dr = 0;  // per-frame motion

  double cx_at(int64_t f) const { return cx + vx * static_cast<double>(f); }
  double cy_at(int64_t f) const { return cy + vy * static_cast<double>(f); }
  double radius_at(int64_t f) const { return radius + dr * static_cast<double>(f); }

  bool contains(int64_t f, double px, double py) const {
    const double x = px - cx_at(f), y = py - cy_at(f), r = radius_at(f);
    switch (static_cast<ShapeClass>(shape)) {
      case ShapeClass::square: return std::abs(x) <= r && std::abs(y) <= r;
      case ShapeClass::circle: return x * x + y * y <= r * r;
      case ShapeClass::triangle: return y >= -r && y <= r && std::abs(x) <= (y + r) / 2.0;
    }
    return false;
  }
};

struct Scene {
  SceneConfig cfg;
  std::vector<ActorRecord> actors;
  std::vector<float> video;                         // [3,T,S,S] planar
  std::vector<std::vector<uint8_t>> visible_masks;  // per actor, [T*S*S]
  std::vector<std::vector<uint8_t>> full_masks;     // per actor, pre-occlusion

  int64_t pixels_per_frame() const { return cfg.size * cfg.size; }
};

namespace detail {

inline const float* color_rgb(int c) {
  static const float table[4][3] = {
      {1.f, 0.f, 0.f}, {0.f, 1.f, 0.f}, {0.f, 0.f, 1.f}, {1.f, 1.f, 0.f}};
  return table[c];
}

inline void render_scene(Scene& scene) {
  const int64_t t = scene.cfg.frames, s = scene.cfg.size;
  const size_t n = scene.actors.size();
  scene.video.assign(static_cast<size_t>(3 * t * s * s), 0.f);
  scene.visible_masks.assign(n, std::vector<uint8_t>(static_cast<size_t>(t * s * s), 0));
  scene.full_masks.assign(n, std::vector<uint8_t>(static_cast<size_t>(t * s * s), 0));
  for (int64_t f = 0; f < t; ++f)
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x) {
        const int64_t pix = (f * s + y) * s + x;
        int top = -1;
        for (size_t a = 0; a < n; ++a)
          if (scene.actors[a].contains(f, static_cast<double>(x), static_cast<double>(y))) {
            scene.full_masks[a][static_cast<size_t>(pix)] = 1;
            top = static_cast<int>(a);  // later actors draw on top
          }
        if (top >= 0) {
          scene.visible_masks[static_cast<size_t>(top)][static_cast<size_t>(pix)] = 1;
          const float* rgb = color_rgb(scene.actors[static_cast<size_t>(top)].color);
          for (int c = 0; c < 3; ++c)
            scene.video[static_cast<size_t>((c * t + f) * s * s + y * s + x)] = rgb[c];
        }
      }
}

inline bool sample_actor_geometry(Rng& rng, const SceneConfig& cfg, ActorRecord& a) {
  a.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
  a.vx = a.vy = a.dr = 0;
  const double speed = rng.uniform(1.5, 3.0);
  switch (static_cast<ActorAction>(a.action)) {
    case ActorAction::left: a.vx = -speed; break;
    case ActorAction::right: a.vx = speed; break;
    case ActorAction::up: a.vy = -speed; break;
    case ActorAction::down: a.vy = speed; break;
    case ActorAction::grow: a.dr = rng.uniform(0.8, 1.5); break;
    case ActorAction::shrink: {
      const double max_rate = (a.radius - 2.5) / (3.0 * 1.0);
      if (max_rate < 0.5) return false;
      a.dr = -rng.uniform(0.5, std::min(1.2, max_rate));
      break;
    }
    case ActorAction::still: break;
  }
  const double last = static_cast<double>(cfg.frames - 1);
  const double r_max = std::max(a.radius, a.radius + a.dr * last);
  const double margin = r_max + 1.0;
  const double lo_x = margin - std::min(0.0, a.vx * last);
  const double hi_x = static_cast<double>(cfg.size - 1) - margin - std::max(0.0, a.vx * last);
  const double lo_y = margin - std::min(0.0, a.vy * last);
  const double hi_y = static_cast<double>(cfg.size - 1) - margin - std::max(0.0, a.vy * last);
  if (lo_x >= hi_x || lo_y >= hi_y) return false;
  a.cx = rng.uniform(lo_x, hi_x);
  a.cy = rng.uniform(lo_y, hi_y);
  return true;
}

inline bool shares_attribute(const ActorRecord& a, const ActorRecord& b) {
  return a.shape == b.shape || a.color == b.color || a.action == b.action;
}

inline bool same_triple(const ActorRecord& a, const ActorRecord& b) {
  return a.shape == b.shape && a.color == b.color && a.action == b.action;
}

inline bool visibility_ok(const Scene& scene) {
  const int64_t t = scene.cfg.frames, plane = scene.pixels_per_frame();
  for (size_t a = 0; a < scene.actors.size(); ++a)
    for (int64_t f = 0; f < t; ++f) {
      int64_t full = 0, vis = 0;
      for (int64_t i = 0; i < plane; ++i) {
        full += scene.full_masks[a][static_cast<size_t>(f * plane + i)];
        vis += scene.visible_masks[a][static_cast<size_t>(f * plane + i)];
      }
      if (full == 0) return false;  // drifted fully out of frame (cannot happen by construction)
      if (static_cast<double>(vis) < scene.cfg.min_visible_fraction * static_cast<double>(full))
        return false;
    }
  return true;
}

}  // namespace detail

// Deterministic scene construction. Actor 0 is the rearmost; later actors
// occlude earlier ones. Any two actors share at least one attribute (so a
// query always has to discriminate) but never the full (color, shape,
// action) triple (so the full query is always unique).
inline Scene generate_scene(const SceneConfig& cfg, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5CE11E));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Scene scene;
    scene.cfg = cfg;
    const int count = static_cast<int>(rng.uniform_int(cfg.min_actors, cfg.max_actors));
    bool ok = true;
    for (int i = 0; i < count && ok; ++i) {
      ActorRecord a;
      bool placed = false;
      for (int tries = 0; tries < 500 && !placed; ++tries) {
        a.shape = static_cast<int>(rng.uniform_int(0, kShapeCount - 1));
        a.color = static_cast<int>(rng.uniform_int(0, kColorCount - 1));
        a.action = static_cast<int>(rng.uniform_int(0, kActionCount - 1));
        bool attr_ok = true;
        for (auto& other : scene.actors) {
          if (detail::same_triple(a, other)) attr_ok = false;
          if (!detail::shares_attribute(a, other)) attr_ok = false;
        }
        if (!attr_ok) continue;
        if (!detail::sample_actor_geometry(rng, cfg, a)) continue;
        placed = true;
      }
      if (!placed) ok = false;
      if (ok) scene.actors.push_back(a);
    }
    if (!ok) continue;
    detail::render_scene(scene);
    if (!detail::visibility_ok(scene)) continue;
    return scene;
  }
  throw ContractError("generate_scene: could not satisfy scene constraints");
}

// Minimal uniquely-identifying query for the target actor: color and shape
// always, the action phrase only when needed for uniqueness.
inline std::pair<std::string, int> generate_query(const Scene& scene, size_t target) {
  if (target >= scene.actors.size()) throw ContractError("generate_query: bad target index");
  const auto& t = scene.actors[target];
  bool unique_by_color_shape = true;
  for (size_t i = 0; i < scene.actors.size(); ++i)
    if (i != target && scene.actors[i].color == t.color && scene.actors[i].shape == t.shape)
      unique_by_color_shape = false;
  std::string q = std::string("the ") + color_name(t.color) + " " + shape_name(t.shape);
  if (!unique_by_color_shape) q += std::string(" ") + action_phrase(t.action);
  return {q, t.shape};
}

// The grammar is closed; this is the whole vocabulary.
inline std::vector<std::string> grammar_tokens() {
  std::vector<std::string> toks = {"the"};
  for (int c = 0; c < kColorCount; ++c) toks.push_back(color_name(c));
  for (int s = 0; s < kShapeCount; ++s) toks.push_back(shape_name(s));
  for (int a = 0; a < kActionCount; ++a) {
    std::istringstream ss(action_phrase(a));
    std::string w;
    while (ss >> w) toks.push_back(w);
  }
  std::sort(toks.begin(), toks.end());
  toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
  return toks;
}

struct ManifestEntry {
  uint64_t seed = 0;
  int target = 0;
  std::string query;
};

struct QuerySample {
  Scene scene;
  ManifestEntry entry;
  int target_class = 0;  // shape class of the target

  const std::vector<uint8_t>& gt_visible() const {
    return scene.visible_masks[static_cast<size_t>(entry.target)];
  }
};

// Per-frame ground truth for the target: visible pixels, or the bounding box
// of its pre-occlusion extent when the config asks for box supervision.
inline std::vector<uint8_t> ground_truth_mask(const Scene& scene, int target) {
  const auto& vis = scene.visible_masks[static_cast<size_t>(target)];
  if (!scene.cfg.bbox_ground_truth) return vis;
  const int64_t t = scene.cfg.frames, s = scene.cfg.size, plane = s * s;
  const auto& full = scene.full_masks[static_cast<size_t>(target)];
  std::vector<uint8_t> box(full.size(), 0);
  for (int64_t f = 0; f < t; ++f) {
    int64_t x0 = s, x1 = -1, y0 = s, y1 = -1;
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x)
        if (full[static_cast<size_t>(f * plane + y * s + x)]) {
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    if (x1 < 0) continue;
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) box[static_cast<size_t>(f * plane + y * s + x)] = 1;
  }
  return box;
}

inline QuerySample generate_sample(const SceneConfig& cfg, uint64_t seed) {
  QuerySample sample;
  sample.scene = generate_scene(cfg, seed);
  Rng pick(derive_seed(seed, 0x7A96E7));
  sample.entry.seed = seed;
  sample.entry.target =
      static_cast<int>(pick.uniform_int(0, static_cast<int64_t>(sample.scene.actors.size()) - 1));
  auto [query, cls] = generate_query(sample.scene, static_cast<size_t>(sample.entry.target));
  sample.entry.query = query;
  sample.target_class = cls;
  return sample;
}

inline QuerySample regenerate_sample(const SceneConfig& cfg, const ManifestEntry& entry) {
  QuerySample sample;
  sample.scene = generate_scene(cfg, entry.seed);
  sample.entry = entry;
  auto [query, cls] = generate_query(sample.scene, static_cast<size_t>(entry.target));
  if (query != entry.query)
    throw ContractError("manifest query mismatch for seed " + std::to_string(entry.seed));
  sample.target_class = cls;
  return sample;
}

template <typename S>
Tensor<S> video_tensor(const Scene& scene) {
  std::vector<S> data(scene.video.begin(), scene.video.end());
  return Tensor<S>::from({3, scene.cfg.frames, scene.cfg.size, scene.cfg.size}, std::move(data));
}

struct DatasetSplits {
  std::vector<ManifestEntry> train, val, test;
};

// Disjoint seed ranges per split; the manifest alone regenerates every
// sample bit-identically.
inline DatasetSplits build_splits(const SceneConfig& cfg, int64_t n_train, int64_t n_val,
                                  int64_t n_test, uint64_t base_seed) {
  DatasetSplits splits;
  uint64_t next = base_seed;
  auto make = [&](int64_t n) {
    std::vector<ManifestEntry> entries;
    entries.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) entries.push_back(generate_sample(cfg, next++).entry);
    return entries;
  };
  splits.train = make(n_train);
  splits.val = make(n_val);
  splits.test = make(n_test);
  return splits;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ContractError("cannot write manifest: " + path);
  for (auto& e : entries) os << e.seed << "\t" << e.target << "\t" << e.query << "\n";
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot read manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ManifestEntry e;
    size_t tab1 = line.find('\t');
    size_t tab2 = line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos)
      throw ContractError("malformed manifest line: " + line);
    e.seed = std::stoull(line.substr(0, tab1));
    e.target = std::stoi(line.substr(tab1 + 1, tab2 - tab1 - 1));
    e.query = line.substr(tab2 + 1);
    entries.push_back(e);
  }
  return entries;
}

}  // namespace mmcaps
