#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmcaps/config.hpp"
#include "mmcaps/decoder.hpp"
#include "mmcaps/losses.hpp"
#include "mmcaps/metrics.hpp"
#include "mmcaps/model.hpp"
#include "mmcaps/optimizer.hpp"
#include "mmcaps/synthetic.hpp"

namespace mmcaps {

// Block-majority downsample of a {0,1} mask by an integer factor;
// ties round to foreground.
inline std::vector<uint8_t> downsample_mask(const std::vector<uint8_t>& mask, int64_t t,
                                            int64_t h, int64_t w, int64_t factor) {
  const int64_t ho = h / factor, wo = w / factor;
  std::vector<uint8_t> out(static_cast<size_t>(t * ho * wo), 0);
  for (int64_t f = 0; f < t; ++f)
    for (int64_t y = 0; y < ho; ++y)
      for (int64_t x = 0; x < wo; ++x) {
        int64_t count = 0;
        for (int64_t dy = 0; dy < factor; ++dy)
          for (int64_t dx = 0; dx < factor; ++dx)
            count += mask[static_cast<size_t>((f * h + y * factor + dy) * w + x * factor + dx)];
        out[static_cast<size_t>((f * ho + y) * wo + x)] =
            2 * count >= factor * factor ? 1 : 0;
      }
  return out;
}

template <typename S>
Tensor<S> mask_tensor(const std::vector<uint8_t>& mask, Shape shape) {
  std::vector<S> data(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) data[i] = mask[i] ? S(1) : S(0);
  return Tensor<S>::from(std::move(shape), std::move(data));
}

// Per-sample loss graph pieces shared by the train loop and tests.
template <typename S>
struct SampleLoss {
  Tensor<S> total;
  double classification = 0.0;
  double segmentation = 0.0;
};

template <typename S>
SampleLoss<S> sample_loss(const Model<S>& model, const QuerySample& sample,
                          const Vocabulary& vocab, double margin, double lambda) {
  const auto& scfg = sample.scene.cfg;
  auto video = video_tensor<S>(sample.scene);
  auto tokens = tokenize_and_pad(sample.entry.query, vocab);
  auto out = model.encode(video, tokens);
  auto lc = spread_loss(out.scores, sample.target_class, margin);
  auto pyramid = model.decode_for_class(out, sample.target_class);

  auto gt = ground_truth_mask(sample.scene, sample.entry.target);
  std::vector<Tensor<S>> seg_losses;
  double seg_value = 0.0;
  for (auto& level : pyramid.levels) {
    const int64_t factor = scfg.size / level.dim(1);
    auto gt_level = factor == 1 ? gt : downsample_mask(gt, scfg.frames, scfg.size, scfg.size, factor);
    auto gt_t = mask_tensor<S>(gt_level, level.shape());
    auto ls = seg_loss(level, gt_t);
    seg_value += static_cast<double>(ls.item());
    seg_losses.push_back(ls);
  }
  SampleLoss<S> result;
  result.total = total_loss(lc, seg_losses, lambda);
  result.classification = static_cast<double>(lc.item());
  result.segmentation = seg_value / static_cast<double>(seg_losses.size());
  return result;
}

template <typename S>
struct InferenceResult {
  int64_t predicted_class = -1;
  bool background_flagged = false;
  std::vector<std::vector<uint8_t>> masks;  // per frame
};

// Test-time protocol: classify, mask by the predicted class, decode. A
// background prediction yields empty masks and a flag instead of a decode.
template <typename S>
InferenceResult<S> infer_sample(const Model<S>& model, const Tensor<S>& video,
                                const TokenSeq& tokens) {
  auto out = model.encode(video, tokens);
  InferenceResult<S> res;
  res.predicted_class = predict_class(out.scores);
  const int64_t t = video.dim(1), plane = video.dim(2) * video.dim(3);
  if (res.predicted_class == model.config().background_class()) {
    res.background_flagged = true;
    res.masks.assign(static_cast<size_t>(t), std::vector<uint8_t>(static_cast<size_t>(plane), 0));
    return res;
  }
  auto pyramid = model.decode_for_class(out, res.predicted_class);
  res.masks = masks_from_logits(pyramid.final_logits());
  return res;
}

// Splits a [T*H*W] mask into per-frame planes.
inline std::vector<std::vector<uint8_t>> split_frames(const std::vector<uint8_t>& mask,
                                                      int64_t t) {
  const size_t plane = mask.size() / static_cast<size_t>(t);
  std::vector<std::vector<uint8_t>> frames;
  for (int64_t f = 0; f < t; ++f)
    frames.emplace_back(mask.begin() + static_cast<int64_t>(plane) * f,
                        mask.begin() + static_cast<int64_t>(plane) * (f + 1));
  return frames;
}

enum class EvalMode { frame, tube };

inline EvalMode eval_mode_from_name(const std::string& s) {
  if (s == "frame") return EvalMode::frame;
  if (s == "tube") return EvalMode::tube;
  throw ContractError("unknown eval mode: " + s);
}

// Runs inference over a manifest and scores it. In frame mode every frame
// is a sample; in tube mode overlaps pool over the whole video first.
template <typename S>
MetricReport evaluate_split(const Model<S>& model, const std::vector<ManifestEntry>& entries,
                            const SceneConfig& scfg, const Vocabulary& vocab, EvalMode mode,
                            int64_t limit = -1) {
  if (entries.empty()) throw ContractError("evaluate_split: empty manifest");
  const int64_t n = limit > 0 ? std::min<int64_t>(limit, static_cast<int64_t>(entries.size()))
                              : static_cast<int64_t>(entries.size());
  std::vector<SampleOverlap> overlaps;
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    auto sample = regenerate_sample(scfg, entries[static_cast<size_t>(i)]);
    auto video = video_tensor<S>(sample.scene);
    auto tokens = tokenize_and_pad(sample.entry.query, vocab);
    auto res = infer_sample(model, video, tokens);
    if (res.predicted_class == sample.target_class) ++correct;
    auto gt_frames = split_frames(ground_truth_mask(sample.scene, sample.entry.target),
                                  scfg.frames);
    if (mode == EvalMode::frame) {
      for (int64_t f = 0; f < scfg.frames; ++f)
        overlaps.push_back(overlap_counts(res.masks[static_cast<size_t>(f)],
                                          gt_frames[static_cast<size_t>(f)]));
    } else {
      overlaps.push_back(tube_overlap(res.masks, gt_frames));
    }
  }
  auto report = make_report(overlaps, mode == EvalMode::frame ? "frame" : "tube");
  report.classification_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return report;
}

struct TrainStats {
  int64_t steps_run = 0;
  double final_loss = 0.0;
  double final_lambda = 0.0;
  double last_val_accuracy = -1.0;
  double last_val_mean_iou = -1.0;
};

// End-to-end training. Writes, under out_dir:
//   train.log  - one line per step: step, m, lambda, L_c, L_s, L (tab-separated)
//   val.log    - one line per validation pass
//   final.ckpt / final.optim / train_state.txt
// Resuming restores parameters, optimizer moments and lambda, and continues
// with the step the interrupted run would have taken next.
template <typename S>
TrainStats train_model(Model<S>& model, const std::vector<ManifestEntry>& train_set,
                       const std::vector<ManifestEntry>& val_set, const Config& cfg,
                       const std::string& out_dir, const std::string& resume_from = "") {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (train_set.empty()) throw ContractError("train: empty training set");

  Adam<S> opt(model.params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  double lambda = cfg.lambda_initial;
  int64_t start_step = 0;
  if (!resume_from.empty()) {
    load_checkpoint(model.params(), resume_from + "/final.ckpt");
    opt.load_state(resume_from + "/final.optim");
    start_step = opt.step_count();
    std::ifstream st(resume_from + "/train_state.txt");
    std::string line;
    while (std::getline(st, line))
      if (line.rfind("lambda=", 0) == 0) lambda = std::stod(line.substr(7));
  }

  const SceneConfig scfg = cfg.scene_config();
  const Vocabulary vocab(grammar_tokens());
  const int64_t margin_ramp = cfg.effective_margin_steps();

  std::ofstream log(out_dir + "/train.log");
  std::ofstream val_log(out_dir + "/val.log");
  if (!log || !val_log) throw ContractError("cannot write logs under " + out_dir);

  TrainStats stats;
  char buf[256];
  for (int64_t step = start_step + 1; step <= cfg.max_steps; ++step) {
    const double margin = margin_schedule(step - 1, cfg.margin_start, cfg.margin_end, margin_ramp);
    Rng batch_rng(derive_seed(cfg.seed, 0xBA7C0000ULL + static_cast<uint64_t>(step)));

    std::vector<Tensor<S>> totals;
    double lc_sum = 0.0, ls_sum = 0.0;
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      const auto& entry =
          train_set[static_cast<size_t>(batch_rng.uniform_int(0, static_cast<int64_t>(train_set.size()) - 1))];
      auto sample = regenerate_sample(scfg, entry);
      auto sl = sample_loss(model, sample, vocab, margin, lambda);
      totals.push_back(sl.total);
      lc_sum += sl.classification;
      ls_sum += sl.segmentation;
    }
    Tensor<S> batch_loss = totals[0];
    for (size_t i = 1; i < totals.size(); ++i) batch_loss = add(batch_loss, totals[i]);
    batch_loss = mul_scalar(batch_loss, S(1) / static_cast<S>(cfg.batch_size));

    const double loss_value = static_cast<double>(batch_loss.item());
    const double lc = lc_sum / static_cast<double>(cfg.batch_size);
    const double ls = ls_sum / static_cast<double>(cfg.batch_size);
    if (!std::isfinite(loss_value)) {
      std::ofstream dump(out_dir + "/diagnostic.txt");
      dump << "non-finite loss at step " << step << "\n"
           << "margin=" << margin << " lambda=" << lambda << "\n"
           << "L_c=" << lc << " L_s=" << ls << " L=" << loss_value << "\n";
      for (auto& item : model.params().items()) {
        double norm = 0;
        for (S v : item.tensor.values()) norm += static_cast<double>(v) * static_cast<double>(v);
        dump << item.name << " l2=" << std::sqrt(norm) << "\n";
      }
      throw NumericError("training diverged: non-finite loss at step " + std::to_string(step));
    }

    backward(batch_loss);
    opt.step();
    model.params().zero_grads();

    std::snprintf(buf, sizeof(buf), "%lld\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n",
                  static_cast<long long>(step), margin, lambda, lc, ls, loss_value);
    log << buf;
    stats.final_loss = loss_value;
    stats.steps_run = step - start_step;

    if (cfg.val_interval > 0 && step % cfg.val_interval == 0 && !val_set.empty()) {
      auto report = evaluate_split(model, val_set, scfg, vocab, EvalMode::frame, cfg.val_size);
      lambda = lambda_schedule(report.classification_accuracy, lambda,
                               cfg.acc_saturation_threshold);
      std::snprintf(buf, sizeof(buf), "%lld\taccuracy=%.6f\tmean_iou=%.6f\tlambda=%.6f\n",
                    static_cast<long long>(step), report.classification_accuracy,
                    report.mean_iou, lambda);
      val_log << buf;
      stats.last_val_accuracy = report.classification_accuracy;
      stats.last_val_mean_iou = report.mean_iou;
    }
  }
  stats.final_lambda = lambda;

  save_checkpoint(model.params(), out_dir + "/final.ckpt");
  opt.save_state(out_dir + "/final.optim");
  std::ofstream st(out_dir + "/train_state.txt");
  st << "lambda=" << lambda << "\n";
  return stats;
}

}  // namespace mmcaps
