#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dllm/attention_layout.hpp"
#include "dllm/error.hpp"
#include "dllm/types.hpp"

namespace dllm {

struct ModelConfig {
  std::size_t vocab_size = 128;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  TokenId mask_token_id = 126;
  TokenId eos_token_id = 127;
  std::uint64_t seed = 7;

  [[nodiscard]] std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size < 2 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0)
      throw ConfigError("model dimensions must be positive (vocab_size >= 2)");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (mask_token_id == eos_token_id) throw ConfigError("mask_token_id and eos_token_id must differ");
    const auto in_vocab = [&](TokenId t) { return t >= 0 && static_cast<std::size_t>(t) < vocab_size; };
    if (!in_vocab(mask_token_id) || !in_vocab(eos_token_id))
      throw ConfigError("mask_token_id and eos_token_id must be < vocab_size");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Parameter count of the toy architecture:
//   embedding             vocab * d
//   per layer             4 d^2 (q,k,v,o) + 2 d d_ff (ffn) + 2 d (norm gains)
//   final norm            d
//   output projection     d * vocab
inline std::size_t count_params(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t per_layer = 4 * d * d + 2 * d * c.d_ff + 2 * d;
  return c.vocab_size * d + c.n_layers * per_layer + d + d * c.vocab_size;
}

// Per-layer key/value rows, each `width` floats. Keys are stored after
// position encoding.
class KVBlock {
 public:
  KVBlock() = default;
  KVBlock(std::size_t layers, std::size_t rows, std::size_t width)
      : layers_(layers), rows_(rows), width_(width), keys_(layers * rows * width), values_(layers * rows * width) {}

  [[nodiscard]] std::size_t layers() const { return layers_; }
  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t width() const { return width_; }

  std::span<float> key(std::size_t layer, std::size_t row) { return {keys_.data() + offset(layer, row), width_}; }
  std::span<float> value(std::size_t layer, std::size_t row) { return {values_.data() + offset(layer, row), width_}; }
  [[nodiscard]] std::span<const float> key(std::size_t layer, std::size_t row) const {
    return {keys_.data() + offset(layer, row), width_};
  }
  [[nodiscard]] std::span<const float> value(std::size_t layer, std::size_t row) const {
    return {values_.data() + offset(layer, row), width_};
  }

  friend bool operator==(const KVBlock&, const KVBlock&) = default;

 private:
  [[nodiscard]] std::size_t offset(std::size_t layer, std::size_t row) const { return (layer * rows_ + row) * width_; }

  std::size_t layers_ = 0;
  std::size_t rows_ = 0;
  std::size_t width_ = 0;
  std::vector<float> keys_;
  std::vector<float> values_;
};

// Read-only index over cached K/V rows, ordered as the layout's context
// keys. Does not own the underlying storage.
class CacheView {
 public:
  struct Entry {
    Position position = 0;
    KeySource source = KeySource::cache;
    const KVBlock* block = nullptr;
    std::size_t row = 0;
  };

  CacheView() = default;
  explicit CacheView(std::size_t epoch) : epoch_(epoch) {}

  void push(Position position, KeySource source, const KVBlock& block, std::size_t row) {
    if (!entries_.empty() && (block.layers() != layers_ || block.width() != width_))
      throw ShapeError("cache view mixes K/V blocks of different shapes");
    layers_ = block.layers();
    width_ = block.width();
    entries_.push_back({position, source, &block, row});
  }

  [[nodiscard]] std::size_t epoch() const { return epoch_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  [[nodiscard]] std::size_t layers() const { return layers_; }
  [[nodiscard]] std::size_t width() const { return width_; }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }

  [[nodiscard]] std::span<const float> key(std::size_t layer, std::size_t i) const {
    return entries_[i].block->key(layer, entries_[i].row);
  }
  [[nodiscard]] std::span<const float> value(std::size_t layer, std::size_t i) const {
    return entries_[i].block->value(layer, entries_[i].row);
  }

  // Context keys for layout construction.
  [[nodiscard]] std::vector<KeyEntry> key_entries() const {
    std::vector<KeyEntry> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back({e.position, e.source, kMainBlock});
    return out;
  }

 private:
  std::size_t epoch_ = 0;
  std::size_t layers_ = 0;
  std::size_t width_ = 0;
  std::vector<Entry> entries_;
};

// One score vector per query row, with the row's absolute position.
class LogitsView {
 public:
  LogitsView() = default;
  LogitsView(std::vector<Position> positions, std::size_t vocab)
      : positions_(std::move(positions)), vocab_(vocab), scores_(positions_.size() * vocab) {}

  [[nodiscard]] std::size_t rows() const { return positions_.size(); }
  [[nodiscard]] std::size_t vocab() const { return vocab_; }
  [[nodiscard]] const std::vector<Position>& positions() const { return positions_; }
  [[nodiscard]] Position position(std::size_t row) const { return positions_[row]; }

  std::span<float> row(std::size_t r) { return {scores_.data() + r * vocab_, vocab_}; }
  [[nodiscard]] std::span<const float> row(std::size_t r) const { return {scores_.data() + r * vocab_, vocab_}; }

  // Copy of the selected rows, in the given order.
  [[nodiscard]] LogitsView select(std::span<const std::size_t> rows) const {
    std::vector<Position> pos;
    pos.reserve(rows.size());
    for (auto r : rows) pos.push_back(positions_.at(r));
    LogitsView out(std::move(pos), vocab_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = row(rows[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const LogitsView&, const LogitsView&) = default;

 private:
  std::vector<Position> positions_;
  std::size_t vocab_ = 0;
  std::vector<float> scores_;
};

struct ForwardInput {
  std::span<const TokenId> tokens;  // one per layout query row
  const AttentionLayout& layout;
  const CacheView& cache;
  // Schedule cursor for scripted models; deterministic models ignore it.
  std::size_t step = 0;
};

struct ForwardResult {
  LogitsView logits;
  KVBlock kv;  // fresh K/V of the query rows, row-aligned with the layout
};

// Logits over a laid-out token batch. Implementations are immutable and
// `forward` is a pure function of its input.
class Model {
 public:
  virtual ~Model() = default;
  [[nodiscard]] virtual const ModelConfig& config() const = 0;
  [[nodiscard]] virtual ForwardResult forward(const ForwardInput& input) const = 0;
};

// Shape checks shared by model implementations.
inline void check_forward_input(const ModelConfig& cfg, const ForwardInput& in) {
  const auto& layout = in.layout;
  if (layout.num_queries() == 0) throw ShapeError("forward needs at least one query row");
  if (in.tokens.size() != layout.num_queries()) throw ShapeError("token count does not match layout query rows");
  if (layout.num_context_keys() != in.cache.size()) throw ShapeError("layout context keys do not match cache view");
  const auto ctx = layout.context_keys();
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const auto& e = in.cache.entries()[i];
    if (ctx[i].position != e.position || ctx[i].source != e.source)
      throw ShapeError("layout context key disagrees with cache view entry");
  }
  if (!in.cache.empty() && (in.cache.layers() != cfg.n_layers || in.cache.width() != cfg.d_model))
    throw ShapeError("cache view layer count or head dims do not match the model");
  for (TokenId t : in.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) throw ShapeError("token id outside vocabulary");
  }
}

struct Prediction {
  TokenId token = 0;
  float confidence = 0.0F;
};

// Greedy prediction: argmax token and its softmax probability. Ties go to
// the lowest token id.
inline Prediction logits_to_prediction(std::span<const float> scores) {
  if (scores.empty()) throw ShapeError("empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  const double peak = scores[best];
  double sum = 0.0;
  for (float s : scores) sum += std::exp(static_cast<double>(s) - peak);
  return {static_cast<TokenId>(best), static_cast<float>(1.0 / sum)};
}

// Numerically stable softmax, accumulated in double.
inline std::vector<float> softmax(std::span<const float> scores) {
  std::vector<float> out(scores.size());
  if (out.empty()) return out;
  const double peak = *std::max_element(scores.begin(), scores.end());
  std::vector<double> e(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = std::exp(static_cast<double>(scores[i]) - peak);
    sum += e[i];
  }
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

}  // namespace dllm
