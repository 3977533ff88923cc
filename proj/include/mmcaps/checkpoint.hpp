#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "mmcaps/params.hpp"

namespace mmcaps {

// Checkpoint container: 4-byte magic "MMCP", 1 version byte, then for each
// parameter in registration order:
//   u32 name length, name bytes,
//   u32 rank, u32 extents[rank],
//   f32 data[numel]
// All integers and floats little-endian. Values are stored as 32-bit floats
// regardless of the in-memory scalar type; float models round-trip bit-exact.
namespace detail {

constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'P'};
constexpr uint8_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
  uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const ParamStore<S>& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open checkpoint for writing: " + path);
  os.write(detail::kCheckpointMagic, 4);
  os.put(static_cast<char>(detail::kCheckpointVersion));
  for (auto& item : params.items()) {
    detail::write_u32(os, static_cast<uint32_t>(item.name.size()));
    os.write(item.name.data(), static_cast<std::streamsize>(item.name.size()));
    detail::write_u32(os, static_cast<uint32_t>(item.tensor.shape().size()));
    for (int64_t d : item.tensor.shape()) detail::write_u32(os, static_cast<uint32_t>(d));
    for (S v : item.tensor.values()) detail::write_f32(os, static_cast<float>(v));
  }
  if (!os) throw ContractError("checkpoint write failed: " + path);
}

// Loads into an already-constructed store; every stored parameter must
// exist with a matching shape.
template <typename S>
void load_checkpoint(ParamStore<S>& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw ContractError("bad checkpoint magic: " + path);
  int version = is.get();
  if (version != detail::kCheckpointVersion)
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  size_t loaded = 0;
  while (true) {
    uint32_t name_len = detail::read_u32(is);
    if (is.eof() || !is) break;
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = detail::read_u32(is);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = detail::read_u32(is);
    Tensor<S> t = params.find(name);
    if (t.shape() != shape)
      throw ContractError("checkpoint shape mismatch for " + name + ": file " + shape_str(shape) +
                          " vs model " + shape_str(t.shape()));
    auto vals = t.values();
    for (int64_t i = 0; i < t.numel(); ++i) vals[i] = static_cast<S>(detail::read_f32(is));
    if (!is) throw ContractError("truncated checkpoint: " + path);
    ++loaded;
  }
  if (loaded != params.size())
    throw ContractError("checkpoint parameter count mismatch: file " + std::to_string(loaded) +
                        " vs model " + std::to_string(params.size()));
}

}  // namespace mmcaps
