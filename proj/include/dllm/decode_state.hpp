#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dllm/error.hpp"
#include "dllm/types.hpp"

namespace dllm {

// Prompt followed by a block-partitioned response region that starts fully
// masked.
struct DecodeState {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> masked;
  std::size_t prompt_len = 0;
  std::size_t gen_length = 0;
  std::size_t block_size = 0;
  std::size_t active_block = 0;
  double t = 1.0;  // diffusion time, tau-leaping only
  TokenId mask_token = 0;

  static DecodeState start(std::span<const TokenId> prompt, std::size_t gen_length, std::size_t block_size,
                           TokenId mask_token) {
    if (prompt.empty()) throw PreconditionError("prompt must be non-empty");
    if (block_size == 0 || gen_length == 0 || gen_length % block_size != 0)
      throw ConfigError("gen_length must be a positive multiple of block_size");
    for (TokenId tok : prompt) {
      if (tok == mask_token) throw PreconditionError("prompt contains the mask token");
    }
    DecodeState s;
    s.prompt_len = prompt.size();
    s.gen_length = gen_length;
    s.block_size = block_size;
    s.mask_token = mask_token;
    s.tokens.assign(prompt.begin(), prompt.end());
    s.tokens.resize(prompt.size() + gen_length, mask_token);
    s.masked.assign(prompt.size(), 0);
    s.masked.resize(prompt.size() + gen_length, 1);
    return s;
  }

  [[nodiscard]] std::size_t seq_len() const { return tokens.size(); }
  [[nodiscard]] std::size_t num_blocks() const { return gen_length / block_size; }
  [[nodiscard]] BlockRange response() const { return {prompt_len, prompt_len + gen_length}; }

  [[nodiscard]] BlockRange block_range(std::size_t b) const {
    if (b >= num_blocks()) throw RangeError("block index beyond generation length");
    const Position begin = prompt_len + b * block_size;
    return {begin, begin + block_size};
  }
  [[nodiscard]] BlockRange active_range() const { return block_range(active_block); }

  [[nodiscard]] bool is_masked(Position p) const { return masked.at(p) != 0; }

  [[nodiscard]] std::vector<Position> masked_in(BlockRange r) const {
    std::vector<Position> out;
    for (Position p = r.begin; p < r.end; ++p) {
      if (masked[p] != 0) out.push_back(p);
    }
    return out;
  }

  [[nodiscard]] std::vector<Position> decoded_in(BlockRange r) const {
    std::vector<Position> out;
    for (Position p = r.begin; p < r.end; ++p) {
      if (masked[p] == 0) out.push_back(p);
    }
    return out;
  }

  [[nodiscard]] std::size_t masked_count() const {
    std::size_t n = 0;
    for (auto m : masked) n += m;
    return n;
  }

  void unmask(Position p, TokenId token) {
    if (p < prompt_len || p >= seq_len()) throw RangeError("unmask outside the response region");
    if (masked[p] == 0) throw InvariantError("position is already decoded");
    if (token == mask_token) throw InvariantError("cannot unmask to the mask token");
    tokens[p] = token;
    masked[p] = 0;
  }

  // Drops response positions beyond `new_gen_length`.
  void truncate(std::size_t new_gen_length) {
    if (new_gen_length == 0 || new_gen_length % block_size != 0 || new_gen_length > gen_length)
      throw RangeError("invalid truncated generation length");
    gen_length = new_gen_length;
    tokens.resize(prompt_len + gen_length);
    masked.resize(prompt_len + gen_length);
  }

  void check_invariants() const {
    if (tokens.size() != masked.size() || tokens.size() != prompt_len + gen_length)
      throw InvariantError("decode state sizes disagree");
    if (block_size == 0 || gen_length % block_size != 0)
      throw InvariantError("gen_length is not a multiple of block_size");
    for (Position p = 0; p < tokens.size(); ++p) {
      const bool is_mask = tokens[p] == mask_token;
      if (p < prompt_len && masked[p] != 0) throw InvariantError("prompt position marked masked");
      if (p >= prompt_len && (masked[p] != 0) != is_mask) throw InvariantError("mask flag disagrees with token");
    }
  }
};

}  // namespace dllm
