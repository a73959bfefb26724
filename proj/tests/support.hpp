#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dllm/decoder.hpp"
#include "dllm/kv_cache.hpp"
#include "dllm/model.hpp"
#include "dllm/scripted_model.hpp"
#include "dllm/toy_model.hpp"

namespace dllm::testing {

// max_i |a_i - b_i| / (1 + |b_i|)
inline double rel_err(std::span<const float> a, std::span<const float> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    worst = std::max(worst, d / (1.0 + std::abs(static_cast<double>(b[i]))));
  }
  return worst;
}

// Row of `logits` holding position `p` (first match), or npos.
inline std::size_t row_of(const LogitsView& logits, Position p) {
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (logits.position(r) == p) return r;
  }
  return static_cast<std::size_t>(-1);
}

inline const ToyModel& toy_model() {
  static const ToyModel model{ModelConfig{}};
  return model;
}

// Random prompt of ordinary tokens (no mask, no EOS).
inline std::vector<TokenId> random_prompt(std::mt19937_64& rng, std::size_t len, const ModelConfig& cfg) {
  std::vector<TokenId> out;
  while (out.size() < len) {
    const auto t = static_cast<TokenId>(rng() % cfg.vocab_size);
    if (t != cfg.mask_token_id && t != cfg.eos_token_id) out.push_back(t);
  }
  return out;
}

// Decode state mid-generation: blocks before `active` fully decoded, the
// active block decoded with probability `p_active`, later blocks with
// probability `p_later`.
struct RandomState {
  DecodeState state;
  BlockRange block;
};

inline RandomState random_state(std::mt19937_64& rng, const ModelConfig& cfg, double p_active = 0.4,
                                double p_later = 0.1) {
  const std::size_t prompt_len = 2 + rng() % 14;
  const std::size_t bs = std::size_t{4} << (rng() % 3);  // 4, 8, 16
  const std::size_t nb = 1 + rng() % 4;
  DecodeState s = DecodeState::start(random_prompt(rng, prompt_len, cfg), bs * nb, bs, cfg.mask_token_id);
  s.active_block = rng() % nb;
  const auto tokens = random_prompt(rng, s.seq_len(), cfg);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Position p = s.prompt_len; p < s.seq_len(); ++p) {
    const std::size_t b = (p - s.prompt_len) / bs;
    const double prob = b < s.active_block ? 1.0 : (b == s.active_block ? p_active : p_later);
    if (u(rng) < prob) s.unmask(p, tokens[p]);
  }
  return {s, s.active_range()};
}

// Logits rows at `positions` of a dense forward over the whole sequence.
inline LogitsView dense_rows(const Model& model, const DecodeState& state, const std::vector<Position>& positions) {
  const AttentionLayout layout = build_full_layout(state.seq_len());
  const CacheView empty;
  const ForwardResult fwd = model.forward({state.tokens, layout, empty, 0});
  std::vector<std::size_t> rows;
  for (Position p : positions) rows.push_back(row_of(fwd.logits, p));
  return fwd.logits.select(rows);
}

// Scripted schedule helpers.
inline ScheduleEntry confident_entry(Position begin, Position end, TokenId token, float confidence) {
  ScheduleEntry e;
  for (Position p = begin; p < end; ++p) e.predictions[p] = {token, confidence};
  return e;
}

// Chain schedule: every response position predicts a token with
// `low` confidence, rising to `high` once its left neighbour is decoded.
// The first position of every block is confident on its own.
inline ScriptedSchedule chain_schedule(std::size_t prompt_len, std::size_t gen_length, std::size_t block_size,
                                       float low = 0.6F, float high = 0.97F) {
  ScheduleEntry e;
  for (std::size_t off = 0; off < gen_length; ++off) {
    const Position p = prompt_len + off;
    const auto tok = static_cast<TokenId>(1 + off % 100);
    e.predictions[p] = {tok, off % block_size == 0 ? high : low};
    if (off % block_size != 0) e.conditionals.push_back({{p - 1}, p, {tok, high}});
  }
  return {{e}};
}

// Confidence inversion for two-level scripted logits: c = e^L / (e^L + V - 1).
inline double two_level_confidence(double logit, std::size_t vocab) {
  return std::exp(logit) / (std::exp(logit) + static_cast<double>(vocab - 1));
}

}  // namespace dllm::testing
