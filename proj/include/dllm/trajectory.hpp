#pragma once

#include <string>
#include <vector>

#include "dllm/length_predictor.hpp"
#include "dllm/model.hpp"
#include "dllm/types.hpp"

namespace dllm {

enum class Strategy : std::uint8_t { vanilla, fast, odb };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::vanilla:
      return "vanilla";
    case Strategy::fast:
      return "fast";
    case Strategy::odb:
      return "odb";
  }
  return "?";
}

// One forward invocation of the decode loop and what it decided.
struct StepRecord {
  std::size_t index = 0;
  Phase phase = Phase::decode;
  std::size_t block = 0;
  std::size_t seq_len = 0;
  std::size_t query_tokens = 0;    // T
  std::size_t context_tokens = 0;  // C: every key entry of the forward
  std::size_t blocks_evaluated = 1;
  int stage = 0;  // 0 = no speculation
  std::vector<Decision> candidates;
  BlockTag adopted_tag = kMainBlock;
  std::size_t jump_count = 0;
  std::vector<Decision> accepted;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct Trajectory {
  Strategy strategy = Strategy::fast;
  ModelConfig model;
  std::size_t prompt_len = 0;
  std::size_t block_size = 0;
  std::size_t initial_gen_length = 0;
  std::size_t final_gen_length = 0;
  std::vector<TokenId> tokens;  // final sequence, prompt included
  std::vector<StepRecord> steps;
  std::vector<TruncationEvent> truncations;

  [[nodiscard]] std::vector<TokenId> response() const {
    return {tokens.begin() + static_cast<std::ptrdiff_t>(prompt_len), tokens.end()};
  }
};

}  // namespace dllm
