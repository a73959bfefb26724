#pragma once

#include <functional>
#include <optional>
#include <random>
#include <span>

#include "dllm/attention_layout.hpp"
#include "dllm/decode_state.hpp"
#include "dllm/decode_step.hpp"
#include "dllm/kv_cache.hpp"
#include "dllm/length_predictor.hpp"
#include "dllm/model.hpp"
#include "dllm/speculative.hpp"
#include "dllm/trajectory.hpp"

namespace dllm {

struct RunConfig {
  Strategy strategy = Strategy::fast;
  std::size_t gen_length = 256;
  std::size_t block_size = 32;
  float accept_threshold = 0.9F;
  float truncate_threshold = 0.9F;
  // Decoded tokens in the block needed before stage 2; defaults to
  // block_size / 4 when unset.
  std::optional<std::size_t> stage2_min_decoded;
  std::uint64_t seed = 0;
  // Vanilla only: >0 switches from threshold decoding to tau-leaping with
  // this many uniform time steps per block.
  std::size_t tau_steps = 0;
  bool speculation = true;  // odb only

  [[nodiscard]] std::size_t stage2_threshold() const { return stage2_min_decoded.value_or(block_size / 4); }

  void validate() const {
    if (block_size == 0 || gen_length == 0 || gen_length % block_size != 0)
      throw ConfigError("gen_length must be a positive multiple of block_size");
    if (!(accept_threshold >= 0.0F && accept_threshold <= 1.0F)) throw ConfigError("accept_threshold must be in [0,1]");
    if (!(truncate_threshold > 0.0F)) throw ConfigError("truncate_threshold must be positive");
  }
};

// Called after every forward of the decode loop with the layout it used.
using ForwardObserver = std::function<void(const StepRecord&, const AttentionLayout&)>;

namespace detail {

class DecodeLoop {
 public:
  DecodeLoop(const Model& model, std::span<const TokenId> prompt, const RunConfig& cfg, const ForwardObserver& observer)
      : model_(model),
        cfg_(cfg),
        observer_(observer),
        state_(DecodeState::start(prompt, cfg.gen_length, cfg.block_size, model.config().mask_token_id)),
        rng_(cfg.seed) {
    traj_.strategy = cfg.strategy;
    traj_.model = model.config();
    traj_.prompt_len = prompt.size();
    traj_.block_size = cfg.block_size;
    traj_.initial_gen_length = cfg.gen_length;
  }

  Trajectory run() {
    for (std::size_t b = 0; b < state_.num_blocks(); ++b) {
      state_.active_block = b;
      switch (cfg_.strategy) {
        case Strategy::vanilla:
          if (cfg_.tau_steps > 0) {
            vanilla_tau_block();
          } else {
            vanilla_block();
          }
          break;
        case Strategy::fast:
        case Strategy::odb:
          cached_block();
          break;
      }
    }
    state_.check_invariants();
    traj_.final_gen_length = state_.gen_length;
    traj_.tokens = state_.tokens;
    return std::move(traj_);
  }

 private:
  StepRecord& record(Phase phase, const AttentionLayout& layout) {
    StepRecord r;
    r.index = traj_.steps.size();
    r.phase = phase;
    r.block = state_.active_block;
    r.seq_len = state_.seq_len();
    r.query_tokens = layout.num_queries();
    r.context_tokens = layout.num_keys();
    traj_.steps.push_back(std::move(r));
    return traj_.steps.back();
  }

  void notify(const StepRecord& r, const AttentionLayout& layout) const {
    if (observer_) observer_(r, layout);
  }

  void commit(const StepOutcome& outcome) {
    if (outcome.accepted.empty()) throw InvariantError("decode step unmasked no token");
    apply_outcome(state_, outcome);
    ++decode_steps_;
    if (decode_steps_ > cfg_.gen_length * (cfg_.tau_steps + 1)) throw InvariantError("decode loop exceeded its step bound");
  }

  ForwardResult full_forward(AttentionLayout& layout) const {
    layout = build_full_layout(state_.seq_len());
    const CacheView empty;
    return model_.forward({state_.tokens, layout, empty, decode_steps_});
  }

  // Rows of `logits` at the given positions, in position order.
  static LogitsView rows_at(const LogitsView& logits, const std::vector<Position>& positions) {
    std::vector<std::size_t> rows;
    rows.reserve(positions.size());
    for (Position p : positions) {
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        if (logits.position(r) == p) {
          rows.push_back(r);
          break;
        }
      }
    }
    return logits.select(rows);
  }

  void vanilla_block() {
    const BlockRange block = state_.active_range();
    while (!state_.masked_in(block).empty()) {
      AttentionLayout layout;
      const ForwardResult fwd = full_forward(layout);
      const StepOutcome outcome =
          threshold_step(state_, rows_at(fwd.logits, state_.masked_in(block)), cfg_.accept_threshold);
      StepRecord& r = record(Phase::decode, layout);
      r.accepted = outcome.accepted;
      commit(outcome);
      notify(r, layout);
    }
  }

  void vanilla_tau_block() {
    const BlockRange block = state_.active_range();
    state_.t = 1.0;
    for (std::size_t j = 1; j <= cfg_.tau_steps; ++j) {
      const double s = j == cfg_.tau_steps ? 0.0 : 1.0 - static_cast<double>(j) / static_cast<double>(cfg_.tau_steps);
      const auto masked = state_.masked_in(block);
      AttentionLayout layout;
      const ForwardResult fwd = full_forward(layout);
      DecodeState next = tau_leaping_step(state_, rows_at(fwd.logits, masked), s, rng_);
      StepRecord& r = record(Phase::decode, layout);
      for (Position p : masked) {
        if (!next.is_masked(p)) r.accepted.push_back({p, next.tokens[p], 0.0F});
      }
      state_ = std::move(next);
      ++decode_steps_;
      notify(r, layout);
    }
  }

  void cached_block() {
    BlockRange block = state_.active_range();
    const PrefillDraft draft = cache_.refresh(model_, state_, block, decode_steps_);
    {
      const AttentionLayout layout = build_full_layout(draft.seq_len);
      notify(record(Phase::prefill, layout), layout);
    }

    if (cfg_.strategy == Strategy::odb) {
      if (auto cut = scan_eos(draft, state_, cfg_.truncate_threshold, model_.config().eos_token_id)) {
        if (auto event = apply_truncation(state_, *cut, cache_.epoch())) {
          cache_.truncate(state_.seq_len());
          traj_.truncations.push_back(*event);
        }
      }
    }

    std::optional<StepOutcome> previous;
    const bool speculate = cfg_.strategy == Strategy::odb && cfg_.speculation;
    while (!state_.masked_in(block).empty()) {
      if (speculate && previous && !previous->rejected_top.empty()) {
        const std::size_t decoded = state_.decoded_in(block).size();
        const int stage = decoded > 0 && decoded >= cfg_.stage2_threshold() ? 2 : 1;
        const CandidateSet cands = select_candidates(*previous, stage == 2 ? 4 : 2);
        SpecParams params{cfg_.accept_threshold, cfg_.stage2_threshold()};
        SpecStepResult res = spec_step(model_, state_, cache_, cands, stage, params, decode_steps_);
        StepRecord& r = record(Phase::decode, res.layout);
        r.blocks_evaluated = res.spec_set.num_blocks();
        r.stage = stage;
        r.candidates = cands.candidates;
        r.adopted_tag = res.outcome.adopted_block;
        r.jump_count = res.outcome.jump_count;
        r.accepted = res.outcome.accepted;
        commit(res.outcome);
        notify(r, res.layout);
        previous = std::move(res.outcome);
        continue;
      }

      const CacheView view = cache_view(cache_, nullptr, cache_.epoch());
      const AttentionLayout layout = build_block_layout(block, view.key_entries());
      std::vector<TokenId> tokens(state_.tokens.begin() + static_cast<std::ptrdiff_t>(block.begin),
                                  state_.tokens.begin() + static_cast<std::ptrdiff_t>(block.end));
      const ForwardResult fwd = model_.forward({tokens, layout, view, decode_steps_});
      StepOutcome outcome = threshold_step(state_, rows_at(fwd.logits, state_.masked_in(block)), cfg_.accept_threshold);
      StepRecord& r = record(Phase::decode, layout);
      r.accepted = outcome.accepted;
      commit(outcome);
      notify(r, layout);
      previous = std::move(outcome);
    }
  }

  const Model& model_;
  const RunConfig& cfg_;
  const ForwardObserver& observer_;
  DecodeState state_;
  DualCache cache_;
  Trajectory traj_;
  std::mt19937_64 rng_;
  std::size_t decode_steps_ = 0;
};

}  // namespace detail

// Semi-autoregressive block decoding of `prompt`.
//
//   vanilla  every step is a full-sequence forward, no cache
//   fast     DualCache refresh per block, then cached threshold steps
//   odb      fast + EOS-driven length truncation at each refresh +
//            accept-jump / decoded-share speculative steps
inline Trajectory decode(const Model& model, std::span<const TokenId> prompt, const RunConfig& cfg,
                         const ForwardObserver& observer = {}) {
  cfg.validate();
  detail::DecodeLoop loop(model, prompt, cfg, observer);
  return loop.run();
}

}  // namespace dllm
