#pragma once

#include "mmcaps/capsules.hpp"

namespace mmcaps {

// Conditioning strategies for merging the query into the video pathway.
// `routing` is the joint EM scheme; the others are the conventional
// baselines it is compared against.
enum class Conditioning { routing, concat, multiply, filter_poses, filter_acts };

inline const char* conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::routing: return "routing";
    case Conditioning::concat: return "concat";
    case Conditioning::multiply: return "multiply";
    case Conditioning::filter_poses: return "filter_poses";
    case Conditioning::filter_acts: return "filter_acts";
  }
  return "?";
}

inline Conditioning conditioning_from_name(const std::string& s) {
  for (Conditioning c : {Conditioning::routing, Conditioning::concat, Conditioning::multiply,
                         Conditioning::filter_poses, Conditioning::filter_acts})
    if (s == conditioning_name(c)) return c;
  throw ContractError("unknown conditioning method: " + s);
}

// Copies one sentence capsule set to every grid location. The copies share
// the source tensors, so gradients sum over locations.
template <typename S>
CapsuleGrid<S> tile_sentence_capsules(const SentenceCapsules<S>& s, int64_t h, int64_t w) {
  if (h < 1 || w < 1) throw ContractError("tile_sentence_capsules: grid extents must be >= 1");
  CapsuleGrid<S> grid;
  grid.poses = expand(expand(s.poses, 0, w), 0, h);
  grid.activations = expand(expand(s.activations, 0, w), 0, h);
  return grid;
}

// Routes per-location capsule sets (activations [L,N], votes [L,N,J,16])
// and reshapes back onto the grid.
template <typename S>
CapsuleGrid<S> route_to_grid(const Tensor<S>& acts, const Tensor<S>& votes, int64_t h, int64_t w,
                             const EMRoutingParams<S>& params) {
  auto out = em_routing_batch(acts, votes, params);
  const int64_t j = out.activations.dim(1);
  CapsuleGrid<S> grid;
  grid.poses = reshape(out.poses, {h, w, j, 4, 4});
  grid.activations = reshape(out.activations, {h, w, j});
  return grid;
}

// Joint routing of sentence and video capsules. Sentence votes are computed
// once and shared across locations; at each location the sentence and video
// activations/votes are concatenated (sentence first) and routed together.
template <typename S>
CapsuleGrid<S> fuse_by_routing(const CapsuleGrid<S>& video, const SentenceCapsules<S>& sentence,
                               const Tensor<S>& t_video, const Tensor<S>& t_sentence,
                               const EMRoutingParams<S>& params) {
  const int64_t h = video.height(), w = video.width(), l = h * w;
  const int64_t n = video.types(), m = sentence.types();
  const int64_t j = t_video.dim(1);
  if (t_sentence.dim(1) != j)
    throw DimensionError("fuse_by_routing: transform output type mismatch");

  auto votes_video = capsule_votes(reshape(video.poses, {l, n, 16}), t_video);  // [L,n,J,16]
  auto votes_sentence_one =
      capsule_votes(reshape(sentence.poses, {1, m, 16}), t_sentence);           // [1,m,J,16]
  auto votes_sentence = expand(reshape(votes_sentence_one, {m, j, 16}), 0, l);  // [L,m,J,16]

  auto acts = concat<S>({expand(sentence.activations, 0, l), reshape(video.activations, {l, n})},
                        1);                                          // [L,m+n]
  auto votes = concat<S>({votes_sentence, votes_video}, 1);          // [L,m+n,J,16]
  return route_to_grid(acts, votes, h, w, params);
}

// Video-only routing, used by every baseline conditioning method after it
// has injected the sentence information.
template <typename S>
CapsuleGrid<S> route_video_only(const CapsuleGrid<S>& video, const Tensor<S>& t_video,
                                const EMRoutingParams<S>& params) {
  const int64_t h = video.height(), w = video.width(), l = h * w, n = video.types();
  auto votes = capsule_votes(reshape(video.poses, {l, n, 16}), t_video);
  return route_to_grid(reshape(video.activations, {l, n}), votes, h, w, params);
}

// Tiles a per-channel vector over [C,T,H,W].
template <typename S>
Tensor<S> tile_channels(const Tensor<S>& vec, int64_t t, int64_t h, int64_t w) {
  if (vec.rank() != 1) throw DimensionError("tile_channels: vector expected");
  return reshape(expand(vec, 1, t * h * w), {vec.dim(0), t, h, w});
}

// Concatenation conditioning: sentence vector tiled over space, stacked on
// the feature channels, mixed back down with a 1x1x1 convolution.
template <typename S>
Tensor<S> baseline_concat(const Tensor<S>& features, const Tensor<S>& sentence_vec,
                          const Tensor<S>& mix_weight, const Tensor<S>& mix_bias) {
  if (features.rank() != 4) throw DimensionError("baseline_concat: features must be [C,T,H,W]");
  auto tiled = tile_channels(sentence_vec, features.dim(1), features.dim(2), features.dim(3));
  auto stacked = concat<S>({features, tiled}, 0);
  return conv3d(stacked, mix_weight, mix_bias);
}

// Dynamic-filter conditioning on feature maps: per-channel multiplication.
template <typename S>
Tensor<S> baseline_multiply(const Tensor<S>& features, const Tensor<S>& channel_filter) {
  if (features.rank() != 4) throw DimensionError("baseline_multiply: features must be [C,T,H,W]");
  if (channel_filter.dim(0) != features.dim(0))
    throw DimensionError("baseline_multiply: filter/channel mismatch");
  auto tiled =
      tile_channels(channel_filter, features.dim(1), features.dim(2), features.dim(3));
  return mul(features, tiled);
}

// Dynamic filter on capsule poses: a per-type 16-entry filter multiplies the
// flattened pose of every video capsule at every location.
template <typename S>
CapsuleGrid<S> baseline_filter_poses(const CapsuleGrid<S>& video, const Tensor<S>& pose_filter) {
  if (pose_filter.rank() != 2 || pose_filter.dim(0) != video.types() || pose_filter.dim(1) != 16)
    throw DimensionError("baseline_filter_poses: filter must be [n,16]");
  const int64_t h = video.height(), w = video.width(), n = video.types();
  auto filt = expand(expand(pose_filter, 0, w), 0, h);  // [H,W,n,16]
  CapsuleGrid<S> out;
  out.poses = reshape(mul(reshape(video.poses, {h, w, n, 16}), filt), {h, w, n, 4, 4});
  out.activations = video.activations;
  return out;
}

// Dynamic filter on capsule activations: a per-type scalar in [0,1]
// discounts each capsule type everywhere.
template <typename S>
CapsuleGrid<S> baseline_filter_activations(const CapsuleGrid<S>& video,
                                           const Tensor<S>& act_filter) {
  if (act_filter.rank() != 1 || act_filter.dim(0) != video.types())
    throw DimensionError("baseline_filter_activations: filter must be [n]");
  const int64_t h = video.height(), w = video.width();
  CapsuleGrid<S> out;
  out.poses = video.poses;
  out.activations = mul(video.activations, expand(expand(act_filter, 0, w), 0, h));
  return out;
}

}  // namespace mmcaps
