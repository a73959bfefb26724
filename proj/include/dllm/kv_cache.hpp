#pragma once

#include <optional>
#include <vector>

#include "dllm/attention_layout.hpp"
#include "dllm/decode_state.hpp"
#include "dllm/model.hpp"

namespace dllm {

// Full-sequence logits produced by a refresh, before out-of-block
// predictions are discarded.
struct PrefillDraft {
  LogitsView logits;
  std::size_t epoch = 0;
  std::size_t seq_len = 0;
};

// DualCache: K/V of every position outside the active block, taken from one
// full-sequence forward and held fixed for the whole block cycle.
//
// Storage is per-layer and indexed by absolute position; the active block's
// rows are kept in storage but never exposed.
class DualCache {
 public:
  [[nodiscard]] std::size_t epoch() const { return epoch_; }
  [[nodiscard]] std::size_t snapshot_len() const { return snapshot_len_; }
  [[nodiscard]] std::size_t seq_len() const { return seq_len_; }
  [[nodiscard]] BlockRange block() const { return block_; }
  [[nodiscard]] BlockRange prefix_range() const { return {0, block_.begin}; }
  [[nodiscard]] BlockRange suffix_range() const { return {block_.end, seq_len_}; }
  [[nodiscard]] std::size_t size() const { return prefix_range().size() + suffix_range().size(); }
  [[nodiscard]] const KVBlock& storage() const { return kv_; }

  // Bytes of K/V currently exposed (32-bit floats).
  [[nodiscard]] std::size_t bytes() const { return size() * kv_.layers() * kv_.width() * 2 * sizeof(float); }

  // Cached positions in ascending order.
  [[nodiscard]] std::vector<Position> positions() const {
    std::vector<Position> out;
    out.reserve(size());
    for (Position p = 0; p < block_.begin; ++p) out.push_back(p);
    for (Position p = block_.end; p < seq_len_; ++p) out.push_back(p);
    return out;
  }

  // One full-sequence forward over the current state. Counts as one prefill
  // NFE with T = C = seq_len.
  PrefillDraft refresh(const Model& model, const DecodeState& state, BlockRange block, std::size_t step) {
    const BlockRange response = state.response();
    if (block.empty() || block.begin < response.begin || block.end > response.end)
      throw RangeError("block range outside the generation region");
    const AttentionLayout layout = build_full_layout(state.seq_len());
    const CacheView empty;
    ForwardResult fwd = model.forward({state.tokens, layout, empty, step});
    kv_ = std::move(fwd.kv);
    block_ = block;
    seq_len_ = state.seq_len();
    snapshot_len_ = seq_len_;
    ++epoch_;
    return {std::move(fwd.logits), epoch_, seq_len_};
  }

  // Drops suffix entries at or beyond `new_seq_len` after a length cut.
  void truncate(std::size_t new_seq_len) {
    if (new_seq_len < block_.end || new_seq_len > seq_len_) throw RangeError("cache truncation would cut the active block");
    seq_len_ = new_seq_len;
  }

 private:
  KVBlock kv_;
  BlockRange block_;
  std::size_t seq_len_ = 0;
  std::size_t snapshot_len_ = 0;
  std::size_t epoch_ = 0;
};

// K/V of the decoded positions of the active block, computed once in
// block_0's context and shared read-only by speculative blocks.
struct SharedKV {
  std::vector<Position> positions;
  KVBlock kv;
  std::size_t epoch = 0;

  [[nodiscard]] std::size_t size() const { return positions.size(); }
};

// Context for a block forward: prefix and suffix cache entries ascending,
// then shared entries.
inline CacheView cache_view(const DualCache& cache, const SharedKV* shared, std::size_t current_epoch) {
  if (cache.epoch() == 0) throw StalenessError("cache was never refreshed");
  if (cache.epoch() != current_epoch) throw StalenessError("cache epoch does not match the current block cycle");
  if (shared != nullptr && shared->epoch != cache.epoch()) throw StalenessError("shared K/V from another block cycle");
  CacheView view(cache.epoch());
  for (Position p : cache.positions()) view.push(p, KeySource::cache, cache.storage(), p);
  if (shared != nullptr) {
    for (std::size_t i = 0; i < shared->size(); ++i) view.push(shared->positions[i], KeySource::shared, shared->kv, i);
  }
  return view;
}

inline SharedKV build_shared_kv(const Model& model, const DecodeState& state, BlockRange block, const DualCache& cache,
                                std::size_t step) {
  if (block != cache.block()) throw RangeError("shared K/V block differs from the cached block");
  const auto decoded = state.decoded_in(block);
  if (decoded.empty()) throw PreconditionError("no decoded positions to share");

  const CacheView view = cache_view(cache, nullptr, cache.epoch());
  const AttentionLayout layout = build_block_layout(block, view.key_entries());
  std::vector<TokenId> tokens(state.tokens.begin() + static_cast<std::ptrdiff_t>(block.begin),
                              state.tokens.begin() + static_cast<std::ptrdiff_t>(block.end));
  const ForwardResult fwd = model.forward({tokens, layout, view, step});

  SharedKV shared{decoded, KVBlock(fwd.kv.layers(), decoded.size(), fwd.kv.width()), cache.epoch()};
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    const std::size_t row = decoded[i] - block.begin;
    for (std::size_t l = 0; l < fwd.kv.layers(); ++l) {
      auto k = fwd.kv.key(l, row);
      auto v = fwd.kv.value(l, row);
      std::copy(k.begin(), k.end(), shared.kv.key(l, i).begin());
      std::copy(v.begin(), v.end(), shared.kv.value(l, i).begin());
    }
  }
  return shared;
}

}  // namespace dllm
