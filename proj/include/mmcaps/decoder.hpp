#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mmcaps/capsules.hpp"
#include "mmcaps/video.hpp"

namespace mmcaps {

// Segmentation logits at each upsampling stage, coarsest first; the last
// level matches the input video extents and is the one thresholded into
// masks. The earlier heads exist for the multi-resolution loss only.
template <typename S>
struct MaskPyramid {
  std::vector<Tensor<S>> levels;  // each [T,H,W]

  const Tensor<S>& final_logits() const { return levels.back(); }
};

// Mean activation per class over all grid locations.
template <typename S>
Tensor<S> classify(const CapsuleGrid<S>& grid) {
  return mean_axis(mean_axis(grid.activations, 0), 0);  // [n]
}

// Argmax with ties broken toward the lowest class index.
template <typename S>
int64_t predict_class(const Tensor<S>& scores) {
  int64_t best = 0;
  for (int64_t i = 1; i < scores.numel(); ++i)
    if (scores.values()[i] > scores.values()[best]) best = i;
  return best;
}

// Zeroes the pose matrices of every capsule type except class_id. Masked
// entries are exact zeros; gradient flows only through the kept type.
template <typename S>
Tensor<S> mask_poses(const CapsuleGrid<S>& grid, int64_t class_id) {
  return zero_except(grid.poses, 2, class_id);
}

template <typename S>
struct UpBlock {
  Tensor<S> up_weight;    // transpose conv [Ci,Co,kt,kh,kw]
  Tensor<S> up_bias;      // [Co]
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 0, 0};
  Dims3 output_padding{0, 0, 0};
  Tensor<S> skip_weight;  // 1x1x1 projection of the matching encoder tap
  Tensor<S> head_weight;  // per-stage logit head (1x1x1, or 3x3x3 for the last)
  Tensor<S> head_bias;
  Dims3 head_padding{0, 0, 0};
};

template <typename S>
struct DecoderParams {
  std::vector<UpBlock<S>> blocks;  // one per pyramid level, coarsest first
  Tensor<S> final_weight;          // 3x3x3 conv producing the last logits
  Tensor<S> final_bias;
};

// Masked poses -> logit pyramid. The first transposed convolution inverts
// the capsule-kernel geometry and restores the temporal extent; later
// blocks upsample space by 2. Skip taps come in through learned 1x1x1
// projections added before the nonlinearity.
template <typename S>
MaskPyramid<S> decode(const Tensor<S>& masked_poses, const EncoderTaps<S>& taps,
                      const DecoderParams<S>& p) {
  if (masked_poses.rank() != 5) throw DimensionError("decode: poses must be [H,W,n,4,4]");
  const int64_t h = masked_poses.dim(0), w = masked_poses.dim(1), n = masked_poses.dim(2);
  auto x = reshape(permute(reshape(masked_poses, {h, w, n * 16}), {2, 0, 1}), {n * 16, 1, h, w});

  if (taps.skips.size() != p.blocks.size())
    throw DimensionError("decode: skip count does not match decoder stages");

  MaskPyramid<S> pyr;
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& blk = p.blocks[i];
    auto up = conv_transpose3d(x, blk.up_weight, blk.up_bias, blk.stride, blk.padding,
                               blk.output_padding);
    const auto& skip = taps.skips[p.blocks.size() - 1 - i];  // taps are finest-last
    if (skip.dim(2) != up.dim(2) || skip.dim(3) != up.dim(3))
      throw DimensionError("decode: skip resolution " + std::to_string(skip.dim(2)) +
                           " does not match stage " + std::to_string(up.dim(2)));
    auto proj = conv3d(skip, blk.skip_weight, Tensor<S>());
    x = relu(add(up, proj));
    if (blk.head_weight.defined()) {
      auto head = conv3d(x, blk.head_weight, blk.head_bias, {1, 1, 1}, blk.head_padding);
      pyr.levels.push_back(reshape(head, {head.dim(1), head.dim(2), head.dim(3)}));
    }
  }
  auto logits = conv3d(x, p.final_weight, p.final_bias, {1, 1, 1}, {1, 1, 1});
  pyr.levels.push_back(reshape(logits, {logits.dim(1), logits.dim(2), logits.dim(3)}));
  return pyr;
}

// Binary mask per frame: sigmoid(logit) >= 0.5, i.e. logit >= 0.
template <typename S>
std::vector<std::vector<uint8_t>> masks_from_logits(const Tensor<S>& logits) {
  if (logits.rank() != 3) throw DimensionError("masks_from_logits: logits must be [T,H,W]");
  const int64_t t = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  std::vector<std::vector<uint8_t>> masks(static_cast<size_t>(t));
  for (int64_t f = 0; f < t; ++f) {
    masks[static_cast<size_t>(f)].resize(static_cast<size_t>(plane));
    for (int64_t i = 0; i < plane; ++i)
      masks[static_cast<size_t>(f)][static_cast<size_t>(i)] =
          logits.values()[f * plane + i] >= S(0) ? 1 : 0;
  }
  return masks;
}

// Binary PGM (P5), 255 = foreground. Output is byte-stable: fixed header,
// one byte per pixel.
inline void write_pgm(const std::string& path, const std::vector<uint8_t>& mask, int64_t height,
                      int64_t width) {
  if (static_cast<int64_t>(mask.size()) != height * width)
    throw DimensionError("write_pgm: mask size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot write mask: " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  for (uint8_t v : mask) os.put(v ? static_cast<char>(255) : static_cast<char>(0));
}

inline std::vector<uint8_t> read_pgm(const std::string& path, int64_t& height, int64_t& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot read mask: " + path);
  std::string magic;
  int64_t maxval;
  is >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255) throw ContractError("unsupported PGM: " + path);
  is.get();
  std::vector<uint8_t> mask(static_cast<size_t>(height * width));
  for (auto& v : mask) v = is.get() ? 1 : 0;
  if (!is) throw ContractError("truncated PGM: " + path);
  return mask;
}

}  // namespace mmcaps
