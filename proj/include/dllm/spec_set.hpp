#pragma once

#include <cstddef>
#include <vector>

#include "dllm/error.hpp"
#include "dllm/types.hpp"

namespace dllm {

// Below-threshold tokens chosen for speculation, confidence descending
// (ties: lower position first).
struct CandidateSet {
  std::vector<Decision> candidates;

  [[nodiscard]] std::size_t size() const { return candidates.size(); }
  [[nodiscard]] bool empty() const { return candidates.empty(); }
  const Decision& operator[](std::size_t i) const { return candidates[i]; }
};

// One speculative block: which candidates (0-based indices into the
// CandidateSet, ascending) are unmasked in advance.
struct SpecBlock {
  BlockTag tag = 0;
  std::vector<std::size_t> members;
};

// The speculative lattice evaluated alongside block_0 in one forward.
// block_0 (empty subset) is implicit and never listed.
//
// stage 1: {c1} {c2} {c1,c2}
// stage 2: {c1} {c2} {c1,c2} {c3} {c1,c2,c3} {c4} {c1,c2,c3,c4}
//
// Subsets naming a candidate that does not exist are dropped; tags stay
// contiguous (1..n) in the order above.
struct SpecSet {
  int stage = 1;
  CandidateSet candidates;
  std::vector<SpecBlock> blocks;

  [[nodiscard]] std::size_t num_blocks() const { return blocks.size() + 1; }

  // Tag of the block whose subset is exactly `members`, or 0 if absent.
  [[nodiscard]] BlockTag find(const std::vector<std::size_t>& members) const {
    for (const auto& b : blocks) {
      if (b.members == members) return b.tag;
    }
    return kMainBlock;
  }

  [[nodiscard]] const SpecBlock& block(BlockTag tag) const {
    if (tag == kMainBlock || tag > blocks.size()) throw IndexError("no speculative block with that tag");
    return blocks[tag - 1];
  }
};

inline SpecSet build_spec_set(const CandidateSet& candidates, int stage) {
  if (stage != 1 && stage != 2) throw PreconditionError("speculative stage must be 1 or 2");
  if (candidates.empty()) throw PreconditionError("speculative set needs at least one candidate");
  if (candidates.size() > 4) throw PreconditionError("at most four speculative candidates are supported");

  static const std::vector<std::vector<std::size_t>> kStage1 = {{0}, {1}, {0, 1}};
  static const std::vector<std::vector<std::size_t>> kStage2 = {{0}, {1}, {0, 1}, {2}, {0, 1, 2}, {3}, {0, 1, 2, 3}};
  const auto& lattice = stage == 1 ? kStage1 : kStage2;

  SpecSet set;
  set.stage = stage;
  set.candidates = candidates;
  for (const auto& subset : lattice) {
    if (subset.back() >= candidates.size()) continue;
    set.blocks.push_back({static_cast<BlockTag>(set.blocks.size() + 1), subset});
  }
  return set;
}

}  // namespace dllm
