#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "dllm/attention_layout.hpp"
#include "dllm/decode_step.hpp"
#include "dllm/kv_cache.hpp"
#include "dllm/spec_set.hpp"

namespace dllm {

// Top-k of the previous step's below-threshold decisions. An empty result
// means there is nothing to speculate on.
inline CandidateSet select_candidates(const StepOutcome& previous, std::size_t k) {
  if (k == 0 || k > 4) throw PreconditionError("candidate count must be in 1..4");
  std::vector<Decision> ranked = previous.rejected_top;
  std::stable_sort(ranked.begin(), ranked.end(), more_confident);
  if (ranked.size() > k) ranked.resize(k);
  return {std::move(ranked)};
}

struct JumpResolution {
  BlockTag adopted = kMainBlock;
  std::size_t jump_count = 0;

  friend bool operator==(const JumpResolution&, const JumpResolution&) = default;
};

namespace detail {

inline bool accepted_in(const StepOutcome& result, const Decision& candidate) {
  return std::any_of(result.accepted.begin(), result.accepted.end(), [&](const Decision& d) {
    return d.position == candidate.position && d.token == candidate.token;
  });
}

inline std::vector<std::size_t> prefix_members(std::size_t j) {
  std::vector<std::size_t> m(j);
  for (std::size_t i = 0; i < j; ++i) m[i] = i;
  return m;
}

}  // namespace detail

// Accept-jump resolution over the candidate ladder
//   {c1} -> {c1,c2} -> {c1,c2,c3} -> {c1,c2,c3,c4}
// with singletons {c2},{c3},{c4} as fallback entry points.
//
// Entry: the largest ladder block whose candidates block_0 accepted, else
// the first singleton block_0 accepted, else block_0 itself. From a ladder
// block {c1..cj} the next jump goes to {c1..cj+1} when the current block
// accepted c(j+1). Singletons are terminal.
//
// `results` is indexed by tag (results[0] is block_0).
inline JumpResolution resolve_jump(std::span<const StepOutcome> results, const SpecSet& spec) {
  if (results.size() != spec.num_blocks()) throw ShapeError("one step outcome per block is required");
  const auto& cands = spec.candidates.candidates;
  const std::size_t k = cands.size();

  auto ladder_tag = [&](std::size_t j) { return spec.find(detail::prefix_members(j)); };

  for (std::size_t j = k; j >= 1; --j) {
    const BlockTag tag = ladder_tag(j);
    if (tag == kMainBlock) continue;
    bool all = true;
    for (std::size_t i = 0; i < j && all; ++i) all = detail::accepted_in(results[0], cands[i]);
    if (!all) continue;

    BlockTag current = tag;
    std::size_t jumps = 1;
    for (std::size_t level = j; level < k; ++level) {
      const BlockTag next = ladder_tag(level + 1);
      if (next == kMainBlock || !detail::accepted_in(results[current], cands[level])) break;
      current = next;
      ++jumps;
    }
    return {current, jumps};
  }
  for (std::size_t i = 1; i < k; ++i) {
    const BlockTag tag = spec.find({i});
    if (tag != kMainBlock && detail::accepted_in(results[0], cands[i])) return {tag, 1};
  }
  return {kMainBlock, 0};
}

struct SpecStepResult {
  StepOutcome outcome;
  SpecSet spec_set;
  AttentionLayout layout;
  std::vector<StepOutcome> per_block;  // indexed by tag
  JumpResolution resolution;
};

struct SpecParams {
  float accept_threshold = 0.9F;
  std::size_t stage2_min_decoded = 8;
};

// Query-row tokens for a speculative layout: the state's tokens with each
// block's candidate subset written in.
inline std::vector<TokenId> spec_tokens(const DecodeState& state, const AttentionLayout& layout, const SpecSet& spec) {
  std::vector<TokenId> tokens;
  tokens.reserve(layout.num_queries());
  for (const auto& q : layout.queries()) {
    TokenId tok = state.tokens[q.position];
    if (q.tag != kMainBlock) {
      for (std::size_t m : spec.block(q.tag).members) {
        if (spec.candidates[m].position == q.position) tok = spec.candidates[m].token;
      }
    }
    tokens.push_back(tok);
  }
  return tokens;
}

// Per-block threshold acceptance over the rows that are still masked in
// that block.
inline std::vector<StepOutcome> accept_per_block(const DecodeState& state, const AttentionLayout& layout,
                                                 const LogitsView& logits, const std::vector<TokenId>& tokens,
                                                 std::size_t num_blocks, float threshold) {
  std::vector<StepOutcome> out(num_blocks);
  for (BlockTag tag = 0; tag < num_blocks; ++tag) {
    std::vector<std::size_t> rows;
    for (std::size_t r : layout.rows_with_tag(tag)) {
      if (tokens[r] == state.mask_token) rows.push_back(r);
    }
    out[tag] = accept_by_threshold(decide(logits.select(rows), state.mask_token), threshold);
  }
  return out;
}

// One speculative decoding step: block_0 and every speculative block of the
// lattice are evaluated in a single batched forward, each block runs
// threshold acceptance on its own masked rows, and the accept-jump ladder
// picks the adopted block.
//
// Stage 2 first materializes the decoded tokens' K/V in block_0's context
// and exposes them to the speculative blocks as shared keys; those blocks
// then carry only the still-masked positions.
inline SpecStepResult spec_step(const Model& model, const DecodeState& state, const DualCache& cache,
                                const CandidateSet& candidates, int stage, const SpecParams& params,
                                std::size_t step) {
  if (candidates.empty()) throw PreconditionError("speculative step needs candidates");
  const BlockRange block = state.active_range();
  if (cache.block() != block) throw RangeError("cache was refreshed for a different block");
  for (const auto& c : candidates.candidates) {
    if (!block.contains(c.position) || !state.is_masked(c.position))
      throw PreconditionError("candidate is not a masked position of the active block");
  }
  const auto decoded = state.decoded_in(block);
  if (stage == 2 && (decoded.empty() || decoded.size() < params.stage2_min_decoded))
    throw PreconditionError("stage 2 needs more decoded positions in the block");

  SpecStepResult res;
  res.spec_set = build_spec_set(candidates, stage);

  std::optional<SharedKV> shared;
  if (stage == 2) shared = build_shared_kv(model, state, block, cache, step);
  const CacheView view = cache_view(cache, shared ? &*shared : nullptr, cache.epoch());
  res.layout = build_spec_layout(block, res.spec_set, stage == 2 ? std::span<const Position>(decoded)
                                                                 : std::span<const Position>{},
                                 view.key_entries());

  const auto tokens = spec_tokens(state, res.layout, res.spec_set);
  const ForwardResult fwd = model.forward({tokens, res.layout, view, step});

  res.per_block = accept_per_block(state, res.layout, fwd.logits, tokens, res.spec_set.num_blocks(),
                                   params.accept_threshold);
  if (res.per_block[0].accepted.empty()) throw InvariantError("no decidable position in the active block");
  res.resolution = resolve_jump(res.per_block, res.spec_set);

  const BlockTag adopted = res.resolution.adopted;
  res.outcome = res.per_block[adopted];
  if (adopted != kMainBlock) {
    for (std::size_t m : res.spec_set.block(adopted).members) res.outcome.accepted.push_back(candidates[m]);
    std::sort(res.outcome.accepted.begin(), res.outcome.accepted.end(),
              [](const Decision& a, const Decision& b) { return a.position < b.position; });
  }
  res.outcome.adopted_block = adopted;
  res.outcome.jump_count = res.resolution.jump_count;
  return res;
}

}  // namespace dllm
