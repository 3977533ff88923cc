#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmcaps/config.hpp"
#include "mmcaps/gradcheck.hpp"
#include "mmcaps/losses.hpp"
#include "mmcaps/optimizer.hpp"
#include "mmcaps/pipeline.hpp"

using namespace mmcaps;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Config tiny_config() {
  Config cfg;
  cfg.max_steps = 2;
  cfg.batch_size = 2;
  cfg.n_train = 4;
  cfg.n_val = 2;
  cfg.n_test = 2;
  cfg.val_interval = 0;  // no validation in the tiny runs
  return cfg;
}

}  // namespace

TEST_CASE("spread loss hand-computed values") {
  auto perfect = Tensor<double>::from({4}, {0.0, 1.0, 0.0, 0.0});
  CHECK(spread_loss(perfect, 1, 0.9).item() == 0.0);

  // a_gt=0.5, one other 0.5, rest 0, m=0.2 -> 0.2^2 = 0.04
  auto mixed = Tensor<double>::from({4}, {0.5, 0.5, 0.0, 0.0});
  CHECK(spread_loss(mixed, 0, 0.2).item() == doctest::Approx(0.04));

  CHECK_THROWS_AS(spread_loss(mixed, 4, 0.2), ContractError);
  CHECK_THROWS_AS(spread_loss(mixed, -1, 0.2), ContractError);

  // nondecreasing in each non-target activation
  double prev = -1;
  for (double ai : {0.0, 0.2, 0.4, 0.6, 0.8}) {
    auto a = Tensor<double>::from({3}, {0.5, ai, 0.1});
    double v = spread_loss(a, 0, 0.5).item();
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("seg loss values and oracle") {
  auto zeros = Tensor<double>::zeros({2, 4, 4});
  auto gt = Tensor<double>::zeros({2, 4, 4});
  Rng rng(5);
  for (auto& v : gt.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  CHECK(seg_loss(zeros, gt).item() == doctest::Approx(std::log(2.0)));

  // perfect large-magnitude logits drive the loss to ~0
  auto sharp = Tensor<double>::zeros({2, 4, 4});
  for (int64_t i = 0; i < sharp.numel(); ++i)
    sharp.values()[i] = gt.values()[i] > 0.5 ? 50.0 : -50.0;
  CHECK(seg_loss(sharp, gt).item() < 1e-12);

  // random case against a per-pixel scalar loop
  auto logits = Tensor<double>::zeros({2, 4, 4});
  for (auto& v : logits.values()) v = rng.uniform(-3.0, 3.0);
  double manual = 0;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    double x = logits.values()[i], p = gt.values()[i];
    double sp = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    manual += sp - x * p;
  }
  manual /= static_cast<double>(logits.numel());
  CHECK(seg_loss(logits, gt).item() == doctest::Approx(manual).epsilon(1e-12));

  auto wrong = Tensor<double>::zeros({2, 4, 5});
  CHECK_THROWS_AS(seg_loss(logits, wrong), DimensionError);
}

TEST_CASE("total loss respects lambda and multi-resolution averaging") {
  auto lc = Tensor<double>::scalar(2.0);
  std::vector<Tensor<double>> ls = {Tensor<double>::scalar(1.0), Tensor<double>::scalar(3.0)};
  CHECK(total_loss(lc, ls, 1.0).item() == doctest::Approx(2.0));
  CHECK(total_loss(lc, ls, 0.0).item() == doctest::Approx(2.0));  // mean(1,3)
  CHECK(total_loss(lc, ls, 0.5).item() == doctest::Approx(0.5 * 2.0 + 0.5 * 2.0));
  CHECK_THROWS_AS(total_loss(lc, {}, 0.5), ContractError);

  // gradient linearity: grad(total) = lambda grad(Lc) + (1-lambda) grad(Ls)
  auto x = Tensor<double>::from({2}, {0.7, -0.4});
  x.set_requires_grad();
  const double lambda = 0.3;
  auto make_lc = [&] { return sum_all(square(x)); };
  auto make_ls = [&] { return sum_all(mul_scalar(x, 2.0)); };
  x.zero_grad();
  backward(total_loss(make_lc(), {make_ls()}, lambda));
  std::vector<double> g_total(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(make_lc());
  std::vector<double> g_lc(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(make_ls());
  std::vector<double> g_ls(x.grad().begin(), x.grad().end());
  for (size_t i = 0; i < g_total.size(); ++i)
    CHECK(g_total[i] == doctest::Approx(lambda * g_lc[i] + (1 - lambda) * g_ls[i]).epsilon(1e-12));
}

TEST_CASE("margin schedule is linear, clamped, and nondecreasing") {
  CHECK(margin_schedule(0, 0.2, 0.9, 100) == doctest::Approx(0.2));
  CHECK(margin_schedule(100, 0.2, 0.9, 100) == doctest::Approx(0.9));
  CHECK(margin_schedule(5000, 0.2, 0.9, 100) == doctest::Approx(0.9));
  CHECK(margin_schedule(50, 0.2, 0.9, 100) == doctest::Approx(0.55));
  double prev = 0;
  for (int64_t s = 0; s <= 120; ++s) {
    double m = margin_schedule(s, 0.2, 0.9, 100);
    CHECK(m >= prev);
    CHECK(m >= 0.2);
    CHECK(m <= 0.9);
    prev = m;
  }
}

TEST_CASE("lambda schedule latches at the first crossing and stays down") {
  double lambda = 0.5;
  lambda = lambda_schedule(0.90, lambda, 0.95);
  CHECK(lambda == 0.5);
  lambda = lambda_schedule(0.95, lambda, 0.95);  // "over 95%" is strict
  CHECK(lambda == 0.5);
  lambda = lambda_schedule(0.96, lambda, 0.95);
  CHECK(lambda == 0.0);
  lambda = lambda_schedule(0.50, lambda, 0.95);
  CHECK(lambda == 0.0);
}

TEST_CASE("adam takes a plain gradient step with bias correction") {
  ParamStore<double> store;
  auto p = store.add("w", Tensor<double>::from({2}, {1.0, -2.0}));
  Adam<double> opt(store, 0.1, 0.9, 0.999, 1e-8);
  auto loss = sum_all(square(p));
  backward(loss);
  opt.step();
  // first step moves by ~lr in the gradient direction regardless of scale
  CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-3));
  CHECK(p.values()[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-3));
}

TEST_CASE("one training step emits exactly one log record") {
  auto dir = fresh_dir("mmcaps_train_one");
  Config cfg = tiny_config();
  cfg.max_steps = 1;
  auto splits = build_splits(cfg.scene_config(), cfg.n_train, cfg.n_val, 0, cfg.data_seed);
  Model<float> model(cfg.model_config(Vocabulary(grammar_tokens()).size()), cfg.seed);
  auto stats = train_model(model, splits.train, splits.val, cfg, dir.string());
  CHECK(stats.steps_run == 1);
  auto log = slurp(dir / "train.log");
  int lines = 0;
  for (char c : log) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 1);
  CHECK(log.rfind("1\t0.200000\t0.500000\t", 0) == 0);  // step, m, lambda prefix
  fs::remove_all(dir);
}

TEST_CASE("training logs are byte-identical across reruns") {
  Config cfg = tiny_config();
  auto splits = build_splits(cfg.scene_config(), cfg.n_train, cfg.n_val, 0, cfg.data_seed);
  auto vocab_size = Vocabulary(grammar_tokens()).size();
  auto dir1 = fresh_dir("mmcaps_train_det1");
  auto dir2 = fresh_dir("mmcaps_train_det2");
  {
    Model<float> m1(cfg.model_config(vocab_size), cfg.seed);
    train_model(m1, splits.train, splits.val, cfg, dir1.string());
  }
  {
    Model<float> m2(cfg.model_config(vocab_size), cfg.seed);
    train_model(m2, splits.train, splits.val, cfg, dir2.string());
  }
  CHECK(slurp(dir1 / "train.log") == slurp(dir2 / "train.log"));
  CHECK(slurp(dir1 / "final.ckpt") == slurp(dir2 / "final.ckpt"));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("checkpoint round-trip resumes with the identical next-step loss") {
  Config cfg = tiny_config();
  cfg.max_steps = 3;
  auto splits = build_splits(cfg.scene_config(), cfg.n_train, cfg.n_val, 0, cfg.data_seed);
  auto vocab_size = Vocabulary(grammar_tokens()).size();

  // uninterrupted run to step 3
  auto dir_full = fresh_dir("mmcaps_resume_full");
  {
    Model<float> m(cfg.model_config(vocab_size), cfg.seed);
    train_model(m, splits.train, splits.val, cfg, dir_full.string());
  }
  // interrupted at step 2, resumed for step 3
  auto dir_part = fresh_dir("mmcaps_resume_part");
  auto dir_cont = fresh_dir("mmcaps_resume_cont");
  {
    Config part = cfg;
    part.max_steps = 2;
    Model<float> m(part.model_config(vocab_size), part.seed);
    train_model(m, splits.train, splits.val, part, dir_part.string());
  }
  {
    Model<float> m(cfg.model_config(vocab_size), cfg.seed);
    train_model(m, splits.train, splits.val, cfg, dir_cont.string(), dir_part.string());
  }
  // the resumed run has exactly the step-3 line; it must match the full run's
  auto full_log = slurp(dir_full / "train.log");
  auto cont_log = slurp(dir_cont / "train.log");
  auto last_line = full_log.substr(full_log.rfind("3\t"));
  CHECK(cont_log == last_line);
  fs::remove_all(dir_full);
  fs::remove_all(dir_part);
  fs::remove_all(dir_cont);
}

TEST_CASE("config round-trips and rejects unknown keys") {
  Config cfg;
  cfg.max_steps = 123;
  cfg.conditioning = "multiply";
  auto text = serialize_config(cfg);
  auto parsed = parse_config_text(text);
  CHECK(parsed.max_steps == 123);
  CHECK(parsed.conditioning == "multiply");
  CHECK(serialize_config(parsed) == text);

  CHECK_THROWS_AS(parse_config_text("lr=0.1\nbogus_key=3\n"), ContractError);
  CHECK_THROWS_AS(parse_config_text("gt_style=triangle\n"), ContractError);
  CHECK_THROWS_AS(parse_config_text("conditioning=psychic\n"), ContractError);
  CHECK_THROWS_AS(parse_config_text("no equals sign here"), ContractError);

  // every decision value has a key in the serialized form
  for (const char* key :
       {"lr=", "adam_beta1=", "adam_beta2=", "adam_eps=", "batch_size=", "margin_start=",
        "margin_end=", "margin_steps=", "lambda_initial=", "acc_saturation_threshold=",
        "val_interval=", "val_size=", "routing_iterations=", "inv_temp_schedule=",
        "variance_floor=", "transform_init_noise=", "conditioning=", "capsule_kernel=",
        "encoder_channels=", "decoder_channels=", "min_visible_fraction=", "gt_style="})
    CHECK(text.find(key) != std::string::npos);
}

TEST_CASE("downsample_mask takes the block majority with ties up") {
  // 2x2 blocks: {1,1,0,0} -> tie 2/4 -> 1 ; {1,0,0,0} -> 0
  std::vector<uint8_t> mask = {1, 1, 1, 0,
                               0, 0, 0, 0,
                               1, 1, 0, 0,
                               1, 1, 0, 0};
  auto down = downsample_mask(mask, 1, 4, 4, 2);
  CHECK(down == std::vector<uint8_t>({1, 0, 1, 0}));
}
