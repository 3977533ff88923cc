#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "mmcaps/synthetic.hpp"

using namespace mmcaps;

namespace {
SceneConfig base_cfg() { return SceneConfig{}; }
}  // namespace

TEST_CASE("scene generation is deterministic from (cfg, seed)") {
  auto cfg = base_cfg();
  for (uint64_t seed : {1ull, 42ull, 999ull}) {
    auto a = generate_scene(cfg, seed);
    auto b = generate_scene(cfg, seed);
    REQUIRE(a.actors.size() == b.actors.size());
    CHECK(a.video == b.video);
    for (size_t i = 0; i < a.actors.size(); ++i) {
      CHECK(a.actors[i].shape == b.actors[i].shape);
      CHECK(a.actors[i].cx == b.actors[i].cx);
    }
  }
}

TEST_CASE("static single actor has identical masks in every frame") {
  auto cfg = base_cfg();
  cfg.min_actors = cfg.max_actors = 1;
  // find a still actor
  for (uint64_t seed = 1; seed < 400; ++seed) {
    auto scene = generate_scene(cfg, seed);
    if (scene.actors[0].action != static_cast<int>(ActorAction::still)) continue;
    const int64_t plane = scene.pixels_per_frame();
    for (int64_t f = 1; f < cfg.frames; ++f)
      for (int64_t i = 0; i < plane; ++i)
        CHECK(scene.visible_masks[0][static_cast<size_t>(f * plane + i)] ==
              scene.visible_masks[0][static_cast<size_t>(i)]);
    return;
  }
  FAIL("no still actor found in seed range");
}

TEST_CASE("rightward motion advances the mask centroid by the velocity") {
  auto cfg = base_cfg();
  cfg.min_actors = cfg.max_actors = 1;
  for (uint64_t seed = 1; seed < 600; ++seed) {
    auto scene = generate_scene(cfg, seed);
    const auto& a = scene.actors[0];
    if (a.action != static_cast<int>(ActorAction::right)) continue;
    const int64_t plane = scene.pixels_per_frame(), s = cfg.size;
    std::vector<double> centroid(static_cast<size_t>(cfg.frames), 0.0);
    for (int64_t f = 0; f < cfg.frames; ++f) {
      double sum_x = 0;
      int64_t count = 0;
      for (int64_t y = 0; y < s; ++y)
        for (int64_t x = 0; x < s; ++x)
          if (scene.visible_masks[0][static_cast<size_t>(f * plane + y * s + x)]) {
            sum_x += static_cast<double>(x);
            ++count;
          }
      REQUIRE(count > 0);
      centroid[static_cast<size_t>(f)] = sum_x / static_cast<double>(count);
    }
    for (int64_t f = 1; f < cfg.frames; ++f)
      CHECK(centroid[static_cast<size_t>(f)] - centroid[static_cast<size_t>(f - 1)] ==
            doctest::Approx(a.vx).epsilon(0.25));
    return;
  }
  FAIL("no rightward actor found in seed range");
}

TEST_CASE("occlusion: visible masks are disjoint and cover the rendered pixels") {
  auto cfg = base_cfg();
  cfg.min_actors = cfg.max_actors = 3;
  int checked = 0;
  for (uint64_t seed = 1; seed <= 30; ++seed) {
    auto scene = generate_scene(cfg, seed);
    const int64_t plane = scene.pixels_per_frame();
    for (int64_t f = 0; f < cfg.frames; ++f)
      for (int64_t i = 0; i < plane; ++i) {
        int vis_count = 0;
        bool any_full = false;
        for (size_t a = 0; a < scene.actors.size(); ++a) {
          vis_count += scene.visible_masks[a][static_cast<size_t>(f * plane + i)];
          any_full = any_full || scene.full_masks[a][static_cast<size_t>(f * plane + i)];
        }
        CHECK(vis_count <= 1);  // disjoint
        // union of visible masks == union of rendered shapes
        CHECK((vis_count > 0) == any_full);
        // video is colored exactly where something is visible
        bool lit = false;
        const int64_t y = i / cfg.size, x = i % cfg.size;
        for (int c = 0; c < 3; ++c)
          lit = lit ||
                scene.video[static_cast<size_t>((c * cfg.frames + f) * plane + y * cfg.size + x)] > 0;
        CHECK(lit == (vis_count > 0));
      }
    ++checked;
  }
  CHECK(checked == 30);
}

TEST_CASE("queries uniquely identify their target by brute-force predicate") {
  auto cfg = base_cfg();
  for (uint64_t seed = 1; seed <= 300; ++seed) {
    auto sample = generate_sample(cfg, seed);
    const auto& scene = sample.scene;
    // parse attributes back out of the query text
    std::istringstream ss(sample.entry.query);
    std::string the, color, shape;
    ss >> the >> color >> shape;
    std::string action_rest, word;
    while (ss >> word) action_rest += (action_rest.empty() ? "" : " ") + word;

    int matches = 0, match_idx = -1;
    for (size_t a = 0; a < scene.actors.size(); ++a) {
      const auto& act = scene.actors[a];
      bool ok = color == color_name(act.color) && shape == shape_name(act.shape);
      if (ok && !action_rest.empty()) ok = action_rest == action_phrase(act.action);
      if (ok) {
        ++matches;
        match_idx = static_cast<int>(a);
      }
    }
    CHECK(matches == 1);
    CHECK(match_idx == sample.entry.target);
    CHECK(sample.target_class == scene.actors[static_cast<size_t>(sample.entry.target)].shape);
  }
}

TEST_CASE("single-actor scenes omit the action phrase; colliding pairs require it") {
  auto cfg = base_cfg();
  cfg.min_actors = cfg.max_actors = 1;
  auto sample = generate_sample(cfg, 5);
  std::istringstream ss(sample.entry.query);
  int words = 0;
  std::string w;
  while (ss >> w) ++words;
  CHECK(words == 3);  // "the <color> <shape>"

  // multi-actor: find a scene where two actors share color+shape
  cfg.min_actors = cfg.max_actors = 3;
  bool found = false;
  for (uint64_t seed = 1; seed <= 400 && !found; ++seed) {
    auto scene = generate_scene(cfg, seed);
    for (size_t i = 0; i < scene.actors.size() && !found; ++i)
      for (size_t j = 0; j < scene.actors.size() && !found; ++j) {
        if (i == j) continue;
        if (scene.actors[i].color == scene.actors[j].color &&
            scene.actors[i].shape == scene.actors[j].shape) {
          auto [q, cls] = generate_query(scene, i);
          // the action phrase must be present (more than 3 words)
          std::istringstream qs(q);
          int n = 0;
          std::string word;
          while (qs >> word) ++n;
          CHECK(n > 3);
          found = true;
        }
      }
  }
  CHECK(found);
}

TEST_CASE("every distractor shares at least one attribute with every other actor") {
  auto cfg = base_cfg();
  cfg.min_actors = 2;
  cfg.max_actors = 3;
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    auto scene = generate_scene(cfg, seed);
    for (size_t i = 0; i < scene.actors.size(); ++i)
      for (size_t j = i + 1; j < scene.actors.size(); ++j) {
        const auto &a = scene.actors[i], &b = scene.actors[j];
        const bool share =
            a.shape == b.shape || a.color == b.color || a.action == b.action;
        const bool identical =
            a.shape == b.shape && a.color == b.color && a.action == b.action;
        CHECK(share);
        CHECK_FALSE(identical);
      }
  }
}

TEST_CASE("splits are disjoint and manifests regenerate bit-identically") {
  auto cfg = base_cfg();
  auto splits = build_splits(cfg, 20, 10, 10, 1000);
  CHECK(splits.train.size() == 20);
  CHECK(splits.val.size() == 10);
  CHECK(splits.test.size() == 10);
  std::set<uint64_t> seeds;
  for (auto* split : {&splits.train, &splits.val, &splits.test})
    for (auto& e : *split) CHECK(seeds.insert(e.seed).second);

  auto splits2 = build_splits(cfg, 20, 10, 10, 1000);
  for (size_t i = 0; i < splits.train.size(); ++i) {
    CHECK(splits.train[i].seed == splits2.train[i].seed);
    CHECK(splits.train[i].query == splits2.train[i].query);
  }

  auto path = std::filesystem::temp_directory_path() / "mmcaps_manifest_test.tsv";
  save_manifest(splits.val, path.string());
  auto loaded = load_manifest(path.string());
  REQUIRE(loaded.size() == splits.val.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    auto a = regenerate_sample(cfg, loaded[i]);
    auto b = generate_sample(cfg, splits.val[i].seed);
    CHECK(a.scene.video == b.scene.video);
    CHECK(a.entry.query == b.entry.query);
    CHECK(a.gt_visible() == b.gt_visible());
  }
  std::filesystem::remove(path);
}

TEST_CASE("bbox ground truth covers the mask ground truth") {
  auto cfg = base_cfg();
  cfg.bbox_ground_truth = true;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    auto scene = generate_scene(cfg, seed);
    auto box = ground_truth_mask(scene, 0);
    cfg.bbox_ground_truth = false;
    scene.cfg.bbox_ground_truth = false;
    auto vis = ground_truth_mask(scene, 0);
    cfg.bbox_ground_truth = true;
    REQUIRE(box.size() == vis.size());
    int64_t box_count = 0, vis_count = 0;
    for (size_t i = 0; i < box.size(); ++i) {
      if (vis[i]) CHECK(box[i] == 1);
      box_count += box[i];
      vis_count += vis[i];
    }
    CHECK(box_count >= vis_count);
  }
}

TEST_CASE("grammar vocabulary is closed over at most 30 tokens") {
  auto toks = grammar_tokens();
  CHECK(toks.size() <= 30);
  // and every generated query tokenizes without OOV hits
  Vocabulary vocab(toks);
  auto cfg = base_cfg();
  for (uint64_t seed = 1; seed <= 50; ++seed) {
    auto sample = generate_sample(cfg, seed);
    auto seq = tokenize_and_pad(sample.entry.query, vocab);
    for (int i = 0; i < seq.length; ++i)
      CHECK(seq.indices[static_cast<size_t>(i)] >= Vocabulary::kReserved);
  }
}
