#pragma once

#include <optional>

#include "dllm/decode_state.hpp"
#include "dllm/kv_cache.hpp"
#include "dllm/model.hpp"

namespace dllm {

struct EosCut {
  Position position = 0;
  float confidence = 0.0F;
};

struct TruncationEvent {
  std::size_t refresh_epoch = 0;
  Position eos_position = 0;
  float eos_confidence = 0.0F;
  std::size_t old_gen_length = 0;
  std::size_t new_gen_length = 0;

  friend bool operator==(const TruncationEvent&, const TruncationEvent&) = default;
};

// Earliest position at or after the end of the active block whose draft
// prediction is EOS with confidence strictly above `truncate_threshold`.
inline std::optional<EosCut> scan_eos(const PrefillDraft& draft, const DecodeState& state, float truncate_threshold,
                                      TokenId eos_token) {
  const Position from = state.active_range().end;
  std::optional<EosCut> best;
  for (std::size_t r = 0; r < draft.logits.rows(); ++r) {
    const Position p = draft.logits.position(r);
    if (p < from || p >= state.seq_len()) continue;
    if (best && p >= best->position) continue;
    const Prediction pred = logits_to_prediction(draft.logits.row(r));
    if (pred.token == eos_token && pred.confidence > truncate_threshold) best = EosCut{p, pred.confidence};
  }
  return best;
}

// Block-aligned generation length that keeps the response offset `offset`.
inline std::size_t rounded_length(std::size_t offset, std::size_t block_size) {
  return (offset + block_size) / block_size * block_size;
}

// Shrinks the response so that it ends at the first block boundary after
// the EOS position. Returns nothing (state untouched) when the cut would
// land inside the active block, would remove a decoded token, or would not
// shorten the response.
inline std::optional<TruncationEvent> apply_truncation(DecodeState& state, EosCut cut, std::size_t refresh_epoch) {
  const BlockRange active = state.active_range();
  if (cut.position < active.end || cut.position >= state.seq_len()) return std::nullopt;

  const std::size_t active_end_offset = active.end - state.prompt_len;
  const std::size_t new_len = std::max(rounded_length(cut.position - state.prompt_len, state.block_size), active_end_offset);
  if (new_len >= state.gen_length) return std::nullopt;
  for (Position p = state.prompt_len + new_len; p < state.seq_len(); ++p) {
    if (!state.is_masked(p)) return std::nullopt;
  }

  TruncationEvent event{refresh_epoch, cut.position, cut.confidence, state.gen_length, new_len};
  state.truncate(new_len);
  return event;
}

}  // namespace dllm
