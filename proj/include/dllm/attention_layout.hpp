#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dllm/error.hpp"
#include "dllm/spec_set.hpp"
#include "dllm/types.hpp"

namespace dllm {

struct QueryEntry {
  Position position = 0;
  BlockTag tag = kMainBlock;
};

struct KeyEntry {
  Position position = 0;
  KeySource source = KeySource::cache;
  BlockTag tag = kMainBlock;  // meaningful for KeySource::block only

  friend bool operator==(const KeyEntry&, const KeyEntry&) = default;
};

// Query rows plus the keys they may attend to.
//
// Keys are ordered: context keys (cache ascending, then shared), followed by
// one block key per query row in row order. Key `num_context_keys() + i`
// is always the fresh K/V of query row `i`.
//
// Visibility:
//   cache key   -> every query
//   shared key  -> speculative queries (tag != 0); block_0 holds the decoded
//                  rows itself
//   block key   -> queries with the same tag only
class AttentionLayout {
 public:
  AttentionLayout() = default;

  [[nodiscard]] const std::vector<QueryEntry>& queries() const { return queries_; }
  [[nodiscard]] const std::vector<KeyEntry>& keys() const { return keys_; }
  [[nodiscard]] std::size_t num_queries() const { return queries_.size(); }
  [[nodiscard]] std::size_t num_keys() const { return keys_.size(); }
  [[nodiscard]] std::size_t num_context_keys() const { return keys_.size() - queries_.size(); }
  [[nodiscard]] std::span<const KeyEntry> context_keys() const {
    return std::span<const KeyEntry>(keys_).first(num_context_keys());
  }

  // Unchecked visibility predicate used by the forward pass.
  [[nodiscard]] bool allows(std::size_t q, std::size_t k) const {
    if (!dense_.empty()) return dense_[q * keys_.size() + k] != 0;
    const KeyEntry& key = keys_[k];
    switch (key.source) {
      case KeySource::cache:
        return true;
      case KeySource::shared:
        return queries_[q].tag != kMainBlock;
      case KeySource::block:
        return key.tag == queries_[q].tag;
    }
    return false;
  }

  // Row-major num_queries x num_keys 0/1 grid.
  [[nodiscard]] std::vector<std::uint8_t> dense_mask() const {
    std::vector<std::uint8_t> grid(num_queries() * num_keys());
    for (std::size_t q = 0; q < num_queries(); ++q) {
      for (std::size_t k = 0; k < num_keys(); ++k) grid[q * num_keys() + k] = allows(q, k) ? 1 : 0;
    }
    return grid;
  }

  // Replaces the rule-based predicate by an explicit grid. Used to express
  // hand-built visibility patterns (e.g. test oracles).
  void set_dense_mask(std::vector<std::uint8_t> grid) {
    if (grid.size() != num_queries() * num_keys()) throw ShapeError("dense mask does not match layout dimensions");
    dense_ = std::move(grid);
  }

  // Query rows carrying `tag`, in row order.
  [[nodiscard]] std::vector<std::size_t> rows_with_tag(BlockTag tag) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < queries_.size(); ++i) {
      if (queries_[i].tag == tag) rows.push_back(i);
    }
    return rows;
  }

  // Appends a query row and its own block key.
  void push_query(Position position, BlockTag tag) { queries_.push_back({position, tag}); }

  // Finalizes: context keys followed by one block key per query.
  void set_keys(std::span<const KeyEntry> context) {
    keys_.assign(context.begin(), context.end());
    for (const auto& q : queries_) keys_.push_back({q.position, KeySource::block, q.tag});
    dense_.clear();
  }

 private:
  std::vector<QueryEntry> queries_;
  std::vector<KeyEntry> keys_;
  std::vector<std::uint8_t> dense_;
};

// mask_allows with bounds checking.
inline bool mask_allows(const AttentionLayout& layout, std::size_t q, std::size_t k) {
  if (q >= layout.num_queries() || k >= layout.num_keys()) throw IndexError("mask index out of range");
  return layout.allows(q, k);
}

// Every position of the sequence as a query, nothing cached.
inline AttentionLayout build_full_layout(std::size_t seq_len) {
  if (seq_len == 0) throw RangeError("empty sequence");
  AttentionLayout layout;
  for (Position p = 0; p < seq_len; ++p) layout.push_query(p, kMainBlock);
  layout.set_keys({});
  return layout;
}

inline AttentionLayout build_block_layout(BlockRange block, std::span<const KeyEntry> context) {
  if (block.empty()) throw RangeError("empty block range");
  AttentionLayout layout;
  for (Position p = block.begin; p < block.end; ++p) layout.push_query(p, kMainBlock);
  layout.set_keys(context);
  return layout;
}

// Batched layout for block_0 plus every block of `spec_set`.
//
// Stage 1 speculative blocks replicate all block positions. Stage 2
// speculative blocks hold only the still-masked positions; the decoded ones
// are reached through shared keys, which must already be part of `context`.
inline AttentionLayout build_spec_layout(BlockRange block, const SpecSet& spec_set,
                                         std::span<const Position> decoded_positions,
                                         std::span<const KeyEntry> context) {
  if (block.empty()) throw RangeError("empty block range");
  if (spec_set.blocks.empty()) throw PreconditionError("speculative layout needs a non-empty speculative set");
  if (spec_set.stage == 2 && decoded_positions.empty())
    throw PreconditionError("stage 2 layout requires decoded positions");
  for (Position p : decoded_positions) {
    if (!block.contains(p)) throw RangeError("decoded position outside the active block");
  }

  AttentionLayout layout;
  for (Position p = block.begin; p < block.end; ++p) layout.push_query(p, kMainBlock);
  for (const auto& sb : spec_set.blocks) {
    for (Position p = block.begin; p < block.end; ++p) {
      const bool decoded = std::find(decoded_positions.begin(), decoded_positions.end(), p) != decoded_positions.end();
      if (spec_set.stage == 2 && decoded) continue;
      layout.push_query(p, sb.tag);
    }
  }
  layout.set_keys(context);
  return layout;
}

// 0/1 CSV grid, one line per query row.
inline void write_mask_csv(std::ostream& out, const AttentionLayout& layout) {
  const auto grid = layout.dense_mask();
  for (std::size_t q = 0; q < layout.num_queries(); ++q) {
    for (std::size_t k = 0; k < layout.num_keys(); ++k) {
      if (k != 0) out << ',';
      out << static_cast<int>(grid[q * layout.num_keys() + k]);
    }
    out << '\n';
  }
}

}  // namespace dllm
