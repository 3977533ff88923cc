#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mmcaps/gradcheck_suite.hpp"
#include "mmcaps/model.hpp"
#include "mmcaps/pipeline.hpp"

using namespace mmcaps;

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

ModelConfig small_config(Conditioning cond = Conditioning::routing) {
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int64_t>(grammar_tokens().size()) + Vocabulary::kReserved;
  cfg.conditioning = cond;
  return cfg;
}

Vocabulary test_vocab() { return Vocabulary(grammar_tokens()); }

}  // namespace

TEST_CASE("tokenizer truncates, pads and maps unknowns") {
  auto vocab = test_vocab();
  auto empty = tokenize_and_pad("", vocab);
  CHECK(empty.length == 0);
  for (int i = 0; i < kTokenLen; ++i) CHECK(empty.indices[static_cast<size_t>(i)] == Vocabulary::kPad);

  std::string twenty;
  for (int i = 0; i < 20; ++i) twenty += "the ";
  auto t = tokenize_and_pad(twenty, vocab);
  CHECK(t.length == 16);

  auto q = tokenize_and_pad("THE Red Square moving left", vocab);
  CHECK(q.length == 5);
  CHECK(q.indices[0] == vocab.lookup("the"));
  CHECK(q.indices[1] == vocab.lookup("red"));
  for (int i = 5; i < kTokenLen; ++i) CHECK(q.indices[static_cast<size_t>(i)] == Vocabulary::kPad);

  auto unk = tokenize_and_pad("the purple dodecahedron", vocab);
  CHECK(unk.indices[1] == Vocabulary::kOov);
  CHECK(unk.indices[2] == Vocabulary::kOov);
}

TEST_CASE("vocabulary round-trips through its file format") {
  auto vocab = test_vocab();
  CHECK(vocab.tokens().size() <= 30);  // closed grammar stays small
  auto path = std::filesystem::temp_directory_path() / "mmcaps_vocab_test.txt";
  vocab.save(path.string());
  auto loaded = Vocabulary::load(path.string());
  CHECK(loaded.size() == vocab.size());
  for (auto& tok : vocab.tokens()) CHECK(loaded.lookup(tok) == vocab.lookup(tok));
  std::filesystem::remove(path);
}

TEST_CASE("sentence encoder shapes, zero case, and padding invariance") {
  Rng rng(3);
  SentenceEncoderParams<double> p;
  const int64_t d = 8, bw = 10, m = 8;
  p.embed = rand_tensor(rng, {20, d}, -0.5, 0.5);
  for (int64_t kk : {2, 3, 4}) {
    ConvBranch<double> br;
    br.kernel = kk;
    br.weight = rand_tensor(rng, {bw, d, kk}, -0.4, 0.4);
    br.bias = rand_tensor(rng, {bw}, -0.1, 0.1);
    p.branches.push_back(br);
  }
  p.pose_weight = rand_tensor(rng, {m * 16, bw}, -0.4, 0.4);
  p.pose_bias = rand_tensor(rng, {m * 16}, -0.1, 0.1);
  p.act_weight = rand_tensor(rng, {m, bw}, -0.4, 0.4);
  p.act_bias = rand_tensor(rng, {m}, -0.1, 0.1);
  p.types = m;

  TokenSeq seq;
  seq.indices.fill(Vocabulary::kPad);
  seq.indices[0] = 5;
  seq.indices[1] = 7;
  seq.indices[2] = 3;
  seq.length = 3;
  auto enc = encode_sentence(p, seq);
  CHECK(enc.capsules.poses.shape() == Shape{8, 4, 4});
  CHECK(enc.capsules.activations.shape() == Shape{8});
  for (auto v : enc.capsules.activations.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  // junk beyond the query length must not leak into the encoding
  TokenSeq junk = seq;
  junk.indices[5] = 9;
  junk.indices[12] = 11;
  auto enc2 = encode_sentence(p, junk);
  for (int64_t i = 0; i < enc.capsules.poses.numel(); ++i)
    CHECK(enc.capsules.poses.values()[i] == enc2.capsules.poses.values()[i]);
  for (int64_t i = 0; i < m; ++i)
    CHECK(enc.capsules.activations.values()[i] == enc2.capsules.activations.values()[i]);

  // zero embeddings + zero heads -> activations exactly 0.5
  SentenceEncoderParams<double> z = p;
  z.embed = Tensor<double>::zeros({20, d});
  for (auto& br : z.branches) {
    br.weight = Tensor<double>::zeros(br.weight.shape());
    br.bias = Tensor<double>::zeros(br.bias.shape());
  }
  z.pose_weight = Tensor<double>::zeros({m * 16, bw});
  z.pose_bias = Tensor<double>::zeros({m * 16});
  z.act_weight = Tensor<double>::zeros({m, bw});
  z.act_bias = Tensor<double>::zeros({m});
  auto encz = encode_sentence(z, seq);
  for (auto v : encz.capsules.activations.values()) CHECK(v == 0.5);
  for (auto v : encz.capsules.poses.values()) CHECK(v == 0.0);

  // gradient reaches only embedding rows used by real tokens
  p.embed.zero_grad();
  backward(sum_all(square(encode_sentence(p, seq).capsules.poses)));
  auto g = p.embed.grad();
  double pad_row = 0, used_row = 0;
  for (int64_t i = 0; i < d; ++i) {
    pad_row += std::abs(g[Vocabulary::kPad * d + i]);
    used_row += std::abs(g[5 * d + i]);
  }
  CHECK(pad_row == 0.0);
  CHECK(used_row > 0.0);
}

TEST_CASE("empty query encodes deterministically from biases") {
  Rng rng(5);
  SentenceEncoderParams<double> p;
  p.embed = rand_tensor(rng, {10, 4});
  for (int64_t kk : {2, 3, 4}) {
    ConvBranch<double> br;
    br.kernel = kk;
    br.weight = rand_tensor(rng, {6, 4, kk});
    br.bias = rand_tensor(rng, {6});
    p.branches.push_back(br);
  }
  p.pose_weight = rand_tensor(rng, {16, 6});
  p.pose_bias = rand_tensor(rng, {16});
  p.act_weight = rand_tensor(rng, {1, 6});
  p.act_bias = rand_tensor(rng, {1});
  p.types = 1;
  TokenSeq empty;
  empty.indices.fill(Vocabulary::kPad);
  empty.length = 0;
  auto a = encode_sentence(p, empty);
  auto b = encode_sentence(p, empty);
  for (int64_t i = 0; i < 16; ++i)
    CHECK(a.capsules.poses.values()[i] == b.capsules.poses.values()[i]);
}

TEST_CASE("video encoder emits the contracted shapes") {
  ModelConfig cfg = small_config();
  Model<float> model(cfg, 7);
  auto video = Tensor<float>::zeros({3, 4, 64, 64});
  auto vocab = test_vocab();
  auto out = model.encode(video, tokenize_and_pad("the red square", vocab));
  CHECK(out.taps.features.shape() == Shape{64, 4, 16, 16});
  REQUIRE(out.taps.skips.size() == 3);
  CHECK(out.taps.skips[0].shape() == Shape{3, 4, 64, 64});
  CHECK(out.taps.skips[1].shape() == Shape{16, 4, 32, 32});
  CHECK(out.taps.skips[2].shape() == Shape{32, 4, 16, 16});
  CHECK(out.fused.poses.shape() == Shape{12, 12, 4, 4, 4});
  CHECK(out.scores.shape() == Shape{4});

  auto bad = Tensor<float>::zeros({3, 4, 32, 32});
  CHECK_THROWS_AS(model.encode(bad, tokenize_and_pad("the red square", vocab)), DimensionError);
}

TEST_CASE("all conditioning methods emit identical output shapes") {
  auto vocab = test_vocab();
  auto video = Tensor<float>::zeros({3, 4, 64, 64});
  auto tokens = tokenize_and_pad("the red square moving left", vocab);
  Shape pose_shape, act_shape, final_shape;
  bool first = true;
  for (Conditioning c : {Conditioning::routing, Conditioning::concat, Conditioning::multiply,
                         Conditioning::filter_poses, Conditioning::filter_acts}) {
    Model<float> model(small_config(c), 11);
    auto out = model.encode(video, tokens);
    auto pyr = model.decode_for_class(out, 0);
    if (first) {
      pose_shape = out.fused.poses.shape();
      act_shape = out.fused.activations.shape();
      final_shape = pyr.final_logits().shape();
      first = false;
    }
    CHECK(out.fused.poses.shape() == pose_shape);
    CHECK(out.fused.activations.shape() == act_shape);
    CHECK(pyr.final_logits().shape() == final_shape);
    REQUIRE(pyr.levels.size() == 3);
    CHECK(pyr.levels[0].shape() == Shape{4, 16, 16});
    CHECK(pyr.levels[1].shape() == Shape{4, 32, 32});
    CHECK(pyr.levels[2].shape() == Shape{4, 64, 64});
  }
}

TEST_CASE("classify averages activations; ties break to the lowest class") {
  CapsuleGrid<double> grid;
  grid.poses = Tensor<double>::zeros({2, 2, 3, 4, 4});
  grid.activations = Tensor<double>::full({2, 2, 3}, 0.7);
  auto scores = classify(grid);
  for (auto v : scores.values()) CHECK(v == doctest::Approx(0.7));
  CHECK(predict_class(scores) == 0);

  Rng rng(13);
  auto acts = rand_tensor(rng, {3, 2, 5}, 0.0, 1.0);
  grid.activations = acts;
  grid.poses = Tensor<double>::zeros({3, 2, 5, 4, 4});
  auto s = classify(grid);
  for (int64_t c = 0; c < 5; ++c) {
    double mean = 0;
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 2; ++x) mean += acts.values()[(y * 2 + x) * 5 + c];
    CHECK(s.values()[c] == doctest::Approx(mean / 6.0));
  }
}

TEST_CASE("mask_poses zeroes everything but the kept class") {
  Rng rng(17);
  CapsuleGrid<double> grid;
  grid.poses = rand_tensor(rng, {2, 2, 3, 4, 4});
  grid.activations = rand_tensor(rng, {2, 2, 3}, 0.0, 1.0);
  auto masked = mask_poses(grid, 1);
  for (int64_t l = 0; l < 4; ++l)
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t d = 0; d < 16; ++d) {
        double v = masked.values()[(l * 3 + n) * 16 + d];
        if (n == 1)
          CHECK(v == grid.poses.values()[(l * 3 + n) * 16 + d]);
        else
          CHECK(v == 0.0);
      }
  CHECK_THROWS_AS(mask_poses(grid, 3), ContractError);
  CHECK_THROWS_AS(mask_poses(grid, -1), ContractError);

  // single-type grid: masking is the identity
  CapsuleGrid<double> one;
  one.poses = rand_tensor(rng, {2, 2, 1, 4, 4});
  one.activations = rand_tensor(rng, {2, 2, 1});
  auto m1 = mask_poses(one, 0);
  for (int64_t i = 0; i < one.poses.numel(); ++i)
    CHECK(m1.values()[i] == one.poses.values()[i]);
}

TEST_CASE("decoder output is bitwise invariant to masked pose values") {
  ModelConfig cfg = small_config();
  Model<float> model(cfg, 23);
  auto vocab = test_vocab();
  Rng rng(29);
  auto video = Tensor<float>::zeros({3, 4, 64, 64});
  for (auto& v : video.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  auto tokens = tokenize_and_pad("the red square", vocab);
  auto out = model.encode(video, tokens);
  const int64_t keep = 2;
  auto pyr = model.decode_for_class(out, keep);

  for (int trial = 0; trial < 5; ++trial) {
    // perturb the poses of all other classes arbitrarily, re-mask, re-decode
    auto perturbed = out;
    auto clone = Tensor<float>::from(out.fused.poses.shape(),
                                     std::vector<float>(out.fused.poses.values().begin(),
                                                        out.fused.poses.values().end()));
    Rng prng(100 + static_cast<uint64_t>(trial));
    auto vals = clone.values();
    const int64_t types = cfg.output_types();
    for (int64_t l = 0; l < 12 * 12; ++l)
      for (int64_t n = 0; n < types; ++n)
        if (n != keep)
          for (int64_t d = 0; d < 16; ++d)
            vals[(l * types + n) * 16 + d] = static_cast<float>(prng.uniform(-50.0, 50.0));
    perturbed.fused.poses = clone;
    auto pyr2 = model.decode_for_class(perturbed, keep);
    for (size_t lvl = 0; lvl < pyr.levels.size(); ++lvl)
      for (int64_t i = 0; i < pyr.levels[lvl].numel(); ++i)
        CHECK(pyr.levels[lvl].values()[i] == pyr2.levels[lvl].values()[i]);
  }
}

TEST_CASE("model forward is deterministic") {
  auto vocab = test_vocab();
  auto make = [&] {
    Model<float> model(small_config(), 31);
    Rng rng(37);
    auto video = Tensor<float>::zeros({3, 4, 64, 64});
    for (auto& v : video.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    auto out = model.encode(video, tokenize_and_pad("the blue circle growing", vocab));
    return std::vector<float>(out.scores.values().begin(), out.scores.values().end());
  };
  CHECK(make() == make());
}

TEST_CASE("gradcheck suite passes across the board") {
  auto reports = run_gradchecks("all");
  CHECK(reports.size() > 30);
  for (auto& r : reports) {
    INFO(r.name, " max rel err ", r.max_rel_err, " tol ", r.tolerance);
    CHECK(r.pass);
  }
}
