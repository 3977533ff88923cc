#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmcaps/capsules.hpp"
#include "mmcaps/conv.hpp"

namespace mmcaps {

constexpr int kTokenLen = 16;

// Closed vocabulary with two reserved slots: 0 = padding, 1 = out-of-vocab.
// Real tokens are stored sorted; index = position + 2.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kOov = 1;
  static constexpr int kReserved = 2;

  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) {
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    tokens_ = std::move(tokens);
    for (size_t i = 0; i < tokens_.size(); ++i)
      index_[tokens_[i]] = static_cast<int>(i) + kReserved;
  }

  int lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kOov : it->second;
  }

  int size() const { return static_cast<int>(tokens_.size()) + kReserved; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ContractError("cannot write vocabulary: " + path);
    for (auto& t : tokens_) os << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ContractError("cannot read vocabulary: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) tokens.push_back(line);
    return Vocabulary(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TokenSeq {
  std::array<int, kTokenLen> indices{};
  int length = 0;
};

// Lowercase, split on whitespace, map through the vocabulary, then truncate
// or zero-pad to the fixed length.
inline TokenSeq tokenize_and_pad(const std::string& query, const Vocabulary& vocab) {
  TokenSeq seq;
  seq.indices.fill(Vocabulary::kPad);
  std::string lowered(query);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream ss(lowered);
  std::string tok;
  while (ss >> tok && seq.length < kTokenLen) {
    seq.indices[static_cast<size_t>(seq.length)] = vocab.lookup(tok);
    ++seq.length;
  }
  return seq;
}

template <typename S>
struct ConvBranch {
  Tensor<S> weight;  // [width, D, k]
  Tensor<S> bias;    // [width]
  int64_t kernel = 0;
};

template <typename S>
struct SentenceEncoderParams {
  Tensor<S> embed;  // [V, D]
  std::vector<ConvBranch<S>> branches;  // kernels 2, 3, 4
  Tensor<S> pose_weight;  // [m*16, width]
  Tensor<S> pose_bias;    // [m*16]
  Tensor<S> act_weight;   // [m, width]
  Tensor<S> act_bias;     // [m]
  int64_t types = 0;
};

template <typename S>
Tensor<S> embed_tokens(const Tensor<S>& table, const TokenSeq& seq) {
  std::vector<int> idx(seq.indices.begin(), seq.indices.end());
  return embedding(table, idx);  // [kTokenLen, D]
}

template <typename S>
struct SentenceEncoding {
  SentenceCapsules<S> capsules;
  Tensor<S> summary;  // single pooled vector, feeds the baseline filters
};

// Three parallel 1D convolutions (kernels 2/3/4) with ReLU, max-pooled over
// token positions, then an elementwise max across the branches, then a fully
// connected head emitting pose matrices (linear) and activations (sigmoid).
// Windows that touch padding positions are excluded from the pool, so the
// encoding depends only on the real tokens; a branch whose kernel exceeds
// the query length contributes zeros.
template <typename S>
SentenceEncoding<S> encode_sentence(const SentenceEncoderParams<S>& p, const TokenSeq& seq) {
  auto emb = embed_tokens(p.embed, seq);       // [16, D]
  auto x = permute(emb, {1, 0});               // [D, 16]
  std::vector<Tensor<S>> pooled;
  int64_t width = p.branches.front().weight.dim(0);
  for (const auto& br : p.branches) {
    const int64_t k = br.kernel;
    const int64_t valid = static_cast<int64_t>(seq.length) - k + 1;
    if (valid < 1) {
      pooled.push_back(Tensor<S>::zeros({1, width}));
      continue;
    }
    auto conv = relu(conv1d(x, br.weight, br.bias));  // [width, 16-k+1]
    const int64_t total = conv.dim(1);
    if (valid < total) {
      auto mask = Tensor<S>::zeros({width, total});
      auto mv = mask.values();
      for (int64_t c = 0; c < width; ++c)
        for (int64_t pos = valid; pos < total; ++pos) mv[c * total + pos] = S(-1e30);
      conv = add(conv, mask);
    }
    pooled.push_back(reshape(max_axis(conv, 1), {1, width}));
  }
  auto summary = max_axis(concat<S>(pooled, 0), 0);  // [width]

  SentenceEncoding<S> out;
  out.summary = summary;
  out.capsules.poses = reshape(linear(summary, p.pose_weight, p.pose_bias), {p.types, 4, 4});
  out.capsules.activations = sigmoid(linear(summary, p.act_weight, p.act_bias));
  return out;
}

}  // namespace mmcaps
