#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dllm/decode_state.hpp"
#include "dllm/model.hpp"

namespace dllm {

struct StepOutcome {
  std::vector<Decision> accepted;
  // Still-masked positions, confidence descending, ties by position.
  std::vector<Decision> rejected_top;
  std::size_t jump_count = 0;
  BlockTag adopted_block = kMainBlock;
};

// Ranking used for acceptance and candidate selection.
inline bool more_confident(const Decision& a, const Decision& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.position < b.position;
}

// Greedy decisions for each logits row; rows predicting [MASK] are dropped
// as undecided.
inline std::vector<Decision> decide(const LogitsView& logits, TokenId mask_token) {
  std::vector<Decision> out;
  out.reserve(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const Prediction p = logits_to_prediction(logits.row(r));
    if (p.token == mask_token) continue;
    out.push_back({logits.position(r), p.token, p.confidence});
  }
  return out;
}

// Accepts every decision above `threshold`; if none qualifies, the single
// most confident one. An empty input yields an empty outcome.
inline StepOutcome accept_by_threshold(std::vector<Decision> decisions, float threshold) {
  StepOutcome out;
  std::sort(decisions.begin(), decisions.end(), more_confident);
  for (const auto& d : decisions) {
    if (d.confidence > threshold) {
      out.accepted.push_back(d);
    } else {
      out.rejected_top.push_back(d);
    }
  }
  if (out.accepted.empty() && !out.rejected_top.empty()) {
    out.accepted.push_back(out.rejected_top.front());
    out.rejected_top.erase(out.rejected_top.begin());
  }
  std::sort(out.accepted.begin(), out.accepted.end(),
            [](const Decision& a, const Decision& b) { return a.position < b.position; });
  return out;
}

// Confidence-threshold parallel decoding over the masked positions of the
// active block. `logits` must cover exactly those positions.
inline StepOutcome threshold_step(const DecodeState& state, const LogitsView& logits, float threshold) {
  const BlockRange block = state.active_range();
  const auto masked = state.masked_in(block);
  if (masked.empty()) throw PreconditionError("active block has no masked positions");
  if (logits.rows() != masked.size()) throw ShapeError("logits must cover exactly the masked block positions");
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const Position p = logits.position(r);
    if (!block.contains(p) || !state.is_masked(p)) throw ShapeError("logits row outside the masked block positions");
  }
  StepOutcome out = accept_by_threshold(decide(logits, state.mask_token), threshold);
  if (out.accepted.empty()) throw InvariantError("no decidable position in the active block");
  return out;
}

inline void apply_outcome(DecodeState& state, const StepOutcome& outcome) {
  for (const auto& d : outcome.accepted) state.unmask(d.position, d.token);
}

// Uniform double in [0, 1) from the top 53 bits of the generator.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// One reverse transition from time t (state.t) to s < t. Each masked
// position with a logits row stays masked with probability s/t, otherwise
// takes a token sampled from the softmax of its logits ([MASK] excluded).
// Decoded positions are left as they are.
inline DecodeState tau_leaping_step(const DecodeState& state, const LogitsView& logits, double s,
                                    std::mt19937_64& rng) {
  if (!(s >= 0.0 && s < state.t)) throw PreconditionError("tau-leaping requires 0 <= s < t");
  DecodeState next = state;
  const double stay = s / state.t;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const Position p = logits.position(r);
    if (p >= next.seq_len()) throw RangeError("logits row outside the sequence");
    if (!next.is_masked(p)) continue;
    if (uniform01(rng) < stay) continue;

    auto probs = softmax(logits.row(r));
    probs[static_cast<std::size_t>(state.mask_token)] = 0.0F;
    double total = 0.0;
    for (float v : probs) total += v;
    double u = uniform01(rng) * total;
    std::size_t pick = probs.size();
    for (std::size_t v = 0; v < probs.size(); ++v) {
      if (probs[v] <= 0.0F) continue;
      pick = v;
      u -= probs[v];
      if (u < 0.0) break;
    }
    if (pick == probs.size()) throw InvariantError("no token to sample besides the mask token");
    next.unmask(p, static_cast<TokenId>(pick));
  }
  next.t = s;
  return next;
}

}  // namespace dllm
