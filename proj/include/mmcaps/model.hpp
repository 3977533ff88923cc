#pragma once

#include <string>
#include <vector>

#include "mmcaps/capsules.hpp"
#include "mmcaps/decoder.hpp"
#include "mmcaps/fusion.hpp"
#include "mmcaps/params.hpp"
#include "mmcaps/sentence.hpp"
#include "mmcaps/video.hpp"

namespace mmcaps {

struct ModelConfig {
  int64_t frames = 4;
  int64_t height = 64;
  int64_t width = 64;
  std::vector<int64_t> encoder_channels = {16, 32, 48, 64};
  int64_t capsule_kernel = 5;
  int64_t video_types = 8;
  int64_t sentence_types = 8;
  int64_t classes = 3;  // actor classes; +1 background capsule type
  int64_t embed_dim = 32;
  int64_t branch_width = 64;
  std::vector<int64_t> decoder_channels = {32, 24, 16};
  int routing_iterations = 3;
  std::vector<double> inv_temp_schedule = {1.0, 2.0, 3.0};
  double variance_floor = 1e-4;
  double transform_init_noise = 0.1;
  Conditioning conditioning = Conditioning::routing;
  int64_t vocab_size = 0;  // set from the dataset vocabulary

  int64_t output_types() const { return classes + 1; }
  int64_t background_class() const { return classes; }
};

// The complete network for one conditioning method. Only the parameters the
// chosen method uses are created, so checkpoints stay method-specific.
template <typename S>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.vocab_size < Vocabulary::kReserved)
      throw ContractError("model: vocabulary size not set");
    Rng rng(derive_seed(seed, 0xC0DE));
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  struct Output {
    EncoderTaps<S> taps;
    SentenceEncoding<S> sentence;
    CapsuleGrid<S> fused;   // [G,G,n_out]
    Tensor<S> scores;       // [n_out]
  };

  Output encode(const Tensor<S>& video, const TokenSeq& tokens) const {
    if (video.rank() != 4 || video.dim(0) != 3 || video.dim(1) != cfg_.frames ||
        video.dim(2) != cfg_.height || video.dim(3) != cfg_.width)
      throw DimensionError("model: video must be [3," + std::to_string(cfg_.frames) + "," +
                           std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "]");
    Output out;
    out.taps = encode_video(encoder_, video);
    out.sentence = encode_sentence(sentence_, tokens);

    switch (cfg_.conditioning) {
      case Conditioning::routing: {
        auto caps = video_capsules(out.taps.features);
        out.fused = fuse_by_routing(caps, out.sentence.capsules, t_video_, t_sentence_, routing_);
        break;
      }
      case Conditioning::concat: {
        auto cond = baseline_concat(out.taps.features, out.sentence.summary, mix_weight_,
                                    mix_bias_);
        out.fused = route_video_only(video_capsules(cond), t_video_, routing_);
        break;
      }
      case Conditioning::multiply: {
        auto filt = linear(out.sentence.summary, filter_weight_, filter_bias_);
        auto cond = baseline_multiply(out.taps.features, filt);
        out.fused = route_video_only(video_capsules(cond), t_video_, routing_);
        break;
      }
      case Conditioning::filter_poses: {
        auto caps = video_capsules(out.taps.features);
        auto filt = reshape(linear(out.sentence.summary, filter_weight_, filter_bias_),
                            {cfg_.video_types, 16});
        out.fused = route_video_only(baseline_filter_poses(caps, filt), t_video_, routing_);
        break;
      }
      case Conditioning::filter_acts: {
        auto caps = video_capsules(out.taps.features);
        auto filt = sigmoid(linear(out.sentence.summary, filter_weight_, filter_bias_));
        out.fused = route_video_only(baseline_filter_activations(caps, filt), t_video_, routing_);
        break;
      }
    }
    out.scores = classify(out.fused);
    return out;
  }

  MaskPyramid<S> decode_for_class(const Output& out, int64_t class_id) const {
    return decode(mask_poses(out.fused, class_id), out.taps, decoder_);
  }

  const EMRoutingParams<S>& routing_params() const { return routing_; }

 private:
  // Folds time into channels ahead of the 2-d capsule head.
  CapsuleGrid<S> video_capsules(const Tensor<S>& features) const {
    auto folded = reshape(features, {features.dim(0) * features.dim(1), features.dim(2),
                                     features.dim(3)});
    return make_primary_capsules(folded, caps_head_);
  }

  void build(Rng& rng) {
    const auto& ec = cfg_.encoder_channels;
    int64_t in_ch = 3;
    for (size_t b = 0; b < ec.size(); ++b) {
      ConvBlock<S> blk;
      const int64_t fan_in = in_ch * 27;
      blk.weight = params_.add("enc.b" + std::to_string(b) + ".w",
                               init_he<S>(rng, {ec[b], in_ch, 3, 3, 3}, fan_in));
      blk.bias = params_.add("enc.b" + std::to_string(b) + ".b", Tensor<S>::zeros({ec[b]}));
      blk.stride = b < 2 ? Dims3{1, 2, 2} : Dims3{1, 1, 1};
      encoder_.blocks.push_back(blk);
      in_ch = ec[b];
    }

    const int64_t feat_ch = ec.back() * cfg_.frames;  // time folded into channels
    const int64_t k = cfg_.capsule_kernel, n = cfg_.video_types;
    caps_head_.pose_weight = params_.add(
        "caps.pose.w", init_normal<S>(rng, {n * 16, feat_ch, 1, k, k},
                                      1.0 / std::sqrt(static_cast<double>(feat_ch * k * k))));
    caps_head_.pose_bias = params_.add("caps.pose.b", Tensor<S>::zeros({n * 16}));
    caps_head_.act_weight = params_.add(
        "caps.act.w", init_normal<S>(rng, {n, feat_ch, 1, k, k},
                                     1.0 / std::sqrt(static_cast<double>(feat_ch * k * k))));
    caps_head_.act_bias = params_.add("caps.act.b", Tensor<S>::zeros({n}));
    caps_head_.types = n;
    caps_head_.kernel = k;

    const int64_t d = cfg_.embed_dim, bw = cfg_.branch_width, m = cfg_.sentence_types;
    sentence_.embed = params_.add("sent.embed", init_normal<S>(rng, {cfg_.vocab_size, d}, 0.3));
    for (int64_t kk : {2, 3, 4}) {
      ConvBranch<S> br;
      br.kernel = kk;
      br.weight = params_.add("sent.conv" + std::to_string(kk) + ".w",
                              init_he<S>(rng, {bw, d, kk}, d * kk));
      br.bias = params_.add("sent.conv" + std::to_string(kk) + ".b", Tensor<S>::zeros({bw}));
      sentence_.branches.push_back(br);
    }
    sentence_.pose_weight = params_.add(
        "sent.pose.w", init_normal<S>(rng, {m * 16, bw}, 1.0 / std::sqrt(static_cast<double>(bw))));
    sentence_.pose_bias = params_.add("sent.pose.b", Tensor<S>::zeros({m * 16}));
    sentence_.act_weight = params_.add(
        "sent.act.w", init_normal<S>(rng, {m, bw}, 1.0 / std::sqrt(static_cast<double>(bw))));
    sentence_.act_bias = params_.add("sent.act.b", Tensor<S>::zeros({m}));
    sentence_.types = m;

    const int64_t j = cfg_.output_types();
    t_video_ = params_.add("fuse.t_video",
                           init_identity_noise<S>(rng, {n, j, 16}, cfg_.transform_init_noise));
    if (cfg_.conditioning == Conditioning::routing)
      t_sentence_ = params_.add(
          "fuse.t_sentence", init_identity_noise<S>(rng, {m, j, 16}, cfg_.transform_init_noise));
    routing_.beta_a = params_.add("fuse.beta_a", Tensor<S>::zeros({j}));
    routing_.beta_u = params_.add("fuse.beta_u", Tensor<S>::zeros({j}));
    routing_.iterations = cfg_.routing_iterations;
    routing_.inv_temp_schedule = cfg_.inv_temp_schedule;
    routing_.variance_floor = cfg_.variance_floor;

    // conditioning-specific heads driven by the pooled sentence vector
    const int64_t c = ec.back();
    switch (cfg_.conditioning) {
      case Conditioning::routing:
        break;
      case Conditioning::concat:
        mix_weight_ = params_.add(
            "cond.mix.w", init_normal<S>(rng, {c, c + bw, 1, 1, 1},
                                         1.0 / std::sqrt(static_cast<double>(c + bw))));
        mix_bias_ = params_.add("cond.mix.b", Tensor<S>::zeros({c}));
        break;
      case Conditioning::multiply:
        filter_weight_ = params_.add(
            "cond.filter.w", init_normal<S>(rng, {c, bw}, 1.0 / std::sqrt(static_cast<double>(bw))));
        // identity-ish start: all-ones filter leaves features unconditioned
        filter_bias_ = params_.add("cond.filter.b", Tensor<S>::full({c}, S(1)));
        break;
      case Conditioning::filter_poses:
        filter_weight_ = params_.add(
            "cond.filter.w",
            init_normal<S>(rng, {n * 16, bw}, 1.0 / std::sqrt(static_cast<double>(bw))));
        filter_bias_ = params_.add("cond.filter.b", Tensor<S>::full({n * 16}, S(1)));
        break;
      case Conditioning::filter_acts:
        filter_weight_ = params_.add(
            "cond.filter.w", init_normal<S>(rng, {n, bw}, 1.0 / std::sqrt(static_cast<double>(bw))));
        filter_bias_ = params_.add("cond.filter.b", Tensor<S>::zeros({n}));
        break;
    }

    // decoder: first stage inverts the capsule conv and restores time, then
    // two spatial x2 stages; logit heads at the first two stages, final conv
    // after the last
    const auto& dc = cfg_.decoder_channels;
    const int64_t skip_ch[3] = {ec[1], ec[0], 3};  // 16x16, 32x32, 64x64 taps
    int64_t dec_in = j * 16;
    for (size_t i = 0; i < dc.size(); ++i) {
      UpBlock<S> blk;
      const std::string base = "dec.up" + std::to_string(i);
      if (i == 0) {
        blk.up_weight = params_.add(
            base + ".w", init_normal<S>(rng, {dec_in, dc[i], cfg_.frames, k, k},
                                        std::sqrt(2.0 / static_cast<double>(dec_in * k * k))));
        blk.stride = {1, 1, 1};
        blk.padding = {0, 0, 0};
        blk.output_padding = {0, 0, 0};
      } else {
        blk.up_weight = params_.add(
            base + ".w", init_normal<S>(rng, {dec_in, dc[i], 3, 3, 3},
                                        std::sqrt(2.0 / static_cast<double>(dec_in * 27))));
        blk.stride = {1, 2, 2};
        blk.padding = {1, 1, 1};
        blk.output_padding = {0, 1, 1};
      }
      blk.up_bias = params_.add(base + ".b", Tensor<S>::zeros({dc[i]}));
      blk.skip_weight = params_.add(
          base + ".skip.w", init_normal<S>(rng, {dc[i], skip_ch[i], 1, 1, 1},
                                           1.0 / std::sqrt(static_cast<double>(skip_ch[i]))));
      if (i + 1 < dc.size()) {
        blk.head_weight = params_.add(
            base + ".head.w",
            init_normal<S>(rng, {1, dc[i], 1, 1, 1}, 1.0 / std::sqrt(static_cast<double>(dc[i]))));
        blk.head_bias = params_.add(base + ".head.b", Tensor<S>::zeros({1}));
      }
      decoder_.blocks.push_back(blk);
      dec_in = dc[i];
    }
    decoder_.final_weight = params_.add(
        "dec.final.w", init_normal<S>(rng, {1, dc.back(), 3, 3, 3},
                                      1.0 / std::sqrt(static_cast<double>(dc.back() * 27))));
    decoder_.final_bias = params_.add("dec.final.b", Tensor<S>::zeros({1}));
  }

  ModelConfig cfg_;
  ParamStore<S> params_;
  VideoEncoderParams<S> encoder_;
  PrimaryCapsuleHead<S> caps_head_;
  SentenceEncoderParams<S> sentence_;
  Tensor<S> t_video_, t_sentence_;
  EMRoutingParams<S> routing_;
  Tensor<S> mix_weight_, mix_bias_;
  Tensor<S> filter_weight_, filter_bias_;
  DecoderParams<S> decoder_;
};

}  // namespace mmcaps
