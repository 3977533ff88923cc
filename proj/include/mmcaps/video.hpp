#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>

#include "mmcaps/conv.hpp"

namespace mmcaps {

// Feature grid plus skip taps at 1x, 1/2 and 1/4 of the input resolution.
// skips[0] is the raw input tap; the decoder owns the learned projections
// that make the connections "parameterized".
template <typename S>
struct EncoderTaps {
  Tensor<S> features;             // [C,T,H/4,W/4]
  std::vector<Tensor<S>> skips;   // [input, after block1, after block2]
};

template <typename S>
struct ConvBlock {
  Tensor<S> weight;
  Tensor<S> bias;
  Dims3 stride{1, 1, 1};
};

// Four 3x3x3 conv blocks (relu), spatial stride 2 in the first two. Time is
// never strided, so the decoder can recover all input frames.
template <typename S>
struct VideoEncoderParams {
  std::vector<ConvBlock<S>> blocks;
};

template <typename S>
EncoderTaps<S> encode_video(const VideoEncoderParams<S>& p, const Tensor<S>& video) {
  if (video.rank() != 4 || video.dim(0) != 3)
    throw DimensionError("encode_video: input must be [3,T,H,W]");
  if (video.dim(2) % 4 != 0 || video.dim(3) % 4 != 0)
    throw DimensionError("encode_video: spatial extents must be divisible by 4");
  EncoderTaps<S> taps;
  taps.skips.push_back(video);
  auto x = video;
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    x = relu(conv3d(x, p.blocks[i].weight, p.blocks[i].bias, p.blocks[i].stride, {1, 1, 1}));
    if (i == 0 || i == 1) taps.skips.push_back(x);
  }
  taps.features = x;
  return taps;
}

// Raw planar f32 video file: 4-byte magic "MMVF", u32 T,H,W (little-endian),
// then 3*T*H*W floats channel-major.
template <typename S>
void save_raw_video(const Tensor<S>& video, const std::string& path) {
  if (video.rank() != 4 || video.dim(0) != 3)
    throw DimensionError("save_raw_video: input must be [3,T,H,W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot write video file: " + path);
  const char magic[4] = {'M', 'M', 'V', 'F'};
  os.write(magic, 4);
  auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<uint32_t>(video.dim(1)));
  put_u32(static_cast<uint32_t>(video.dim(2)));
  put_u32(static_cast<uint32_t>(video.dim(3)));
  for (S v : video.values()) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(bits);
  }
}

template <typename S>
Tensor<S> load_raw_video(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot read video file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MMVF", 4) != 0)
    throw ContractError("bad video file magic: " + path);
  auto get_u32 = [&]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  };
  int64_t t = get_u32(), h = get_u32(), w = get_u32();
  auto video = Tensor<S>::zeros({3, t, h, w});
  for (auto& v : video.values()) {
    uint32_t bits = get_u32();
    float f;
    std::memcpy(&f, &bits, 4);
    v = static_cast<S>(f);
  }
  if (!is) throw ContractError("truncated video file: " + path);
  return video;
}

}  // namespace mmcaps
