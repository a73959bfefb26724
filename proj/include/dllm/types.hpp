#pragma once

#include <cstddef>
#include <cstdint>

namespace dllm {

using TokenId = std::int32_t;
using Position = std::size_t;

// 0 is the main decoding block (block_0); speculative blocks are 1..n.
using BlockTag = std::uint32_t;
inline constexpr BlockTag kMainBlock = 0;

// Half-open range of absolute sequence positions.
struct BlockRange {
  Position begin = 0;
  Position end = 0;

  [[nodiscard]] constexpr std::size_t size() const { return end > begin ? end - begin : 0; }
  [[nodiscard]] constexpr bool empty() const { return end <= begin; }
  [[nodiscard]] constexpr bool contains(Position p) const { return p >= begin && p < end; }
  friend constexpr bool operator==(const BlockRange&, const BlockRange&) = default;
};

// Where an attention key's K/V comes from.
enum class KeySource : std::uint8_t {
  cache,   // DualCache prefix or suffix entry
  shared,  // decoded-token K/V shared across speculative blocks
  block,   // fresh K/V of a query row in the current forward
};

// A single token decision at a position.
struct Decision {
  Position position = 0;
  TokenId token = 0;
  float confidence = 0.0F;

  friend bool operator==(const Decision&, const Decision&) = default;
};

enum class Phase : std::uint8_t { prefill, decode };

inline const char* to_string(Phase p) { return p == Phase::prefill ? "prefill" : "decode"; }

}  // namespace dllm
