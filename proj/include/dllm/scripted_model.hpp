#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "dllm/model.hpp"

namespace dllm {

struct ScriptedPrediction {
  TokenId token = 0;
  float confidence = 0.0F;
};

// Prediction that applies only while every position in `unmasked` is
// visible and already decoded from the query row's point of view.
struct ConditionalPrediction {
  std::vector<Position> unmasked;
  Position position = 0;
  ScriptedPrediction prediction;
};

struct ScheduleEntry {
  std::map<Position, ScriptedPrediction> predictions;
  std::vector<ConditionalPrediction> conditionals;  // first match wins
};

// Step-indexed predictions. A step past the end reuses the final entry.
struct ScriptedSchedule {
  std::vector<ScheduleEntry> steps;

  [[nodiscard]] std::size_t size() const { return steps.size(); }

  void validate() const {
    if (steps.empty()) throw ConfigError("scripted schedule has no steps");
    auto check = [](float c) {
      if (!(c >= 0.0F && c <= 1.0F)) throw ConfigError("scripted confidence outside [0,1]");
    };
    for (const auto& e : steps) {
      for (const auto& [pos, p] : e.predictions) check(p.confidence);
      for (const auto& c : e.conditionals) check(c.prediction.confidence);
    }
  }
};

namespace detail {

// Two-level logits: the target gets L, every other token 0, so that
// softmax(target) = e^L / (e^L + V - 1) = confidence.
inline void write_scripted_logits(std::span<float> row, ScriptedPrediction p, std::size_t vocab) {
  std::fill(row.begin(), row.end(), 0.0F);
  const double others = static_cast<double>(vocab - 1);
  const double floor_conf = 1.0 / static_cast<double>(vocab);
  double logit = 0.0;
  if (p.confidence >= 1.0F) {
    logit = 60.0;
  } else if (static_cast<double>(p.confidence) <= floor_conf) {
    logit = 1.0e-3;  // the target can never be argmax with less than 1/V
  } else {
    const double c = p.confidence;
    logit = std::log(c * others / (1.0 - c));
  }
  row[static_cast<std::size_t>(p.token)] = static_cast<float>(logit);
}

// Unlisted positions: [MASK] barely ahead of a uniform rest. The decoder
// treats a [MASK] prediction as undecided.
inline void write_default_logits(std::span<float> row, TokenId mask_token) {
  std::fill(row.begin(), row.end(), 0.0F);
  row[static_cast<std::size_t>(mask_token)] = 1.0e-3F;
}

inline const ScheduleEntry& entry_at(const ScriptedSchedule& schedule, std::size_t step) {
  return schedule.steps[std::min(step, schedule.steps.size() - 1)];
}

}  // namespace detail

// Logits for `positions` at `step`, ignoring conditional entries.
inline LogitsView scripted_forward(const ScriptedSchedule& schedule, std::size_t step, std::span<const Position> positions,
                                   const ModelConfig& config) {
  if (step >= schedule.size()) throw RangeError("step beyond scripted schedule");
  const auto& entry = schedule.steps[step];
  LogitsView out(std::vector<Position>(positions.begin(), positions.end()), config.vocab_size);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    auto it = entry.predictions.find(positions[r]);
    if (it == entry.predictions.end()) {
      detail::write_default_logits(out.row(r), config.mask_token_id);
    } else {
      detail::write_scripted_logits(out.row(r), it->second, config.vocab_size);
    }
  }
  return out;
}

// Model adapter replaying a schedule. The forward is driven by the step
// cursor and by which positions each query row can see decoded:
//   - rows of its own block holding a non-[MASK] token,
//   - visible shared keys (decoded by construction),
//   - visible cache keys left of the block (prefix region).
// K/V are zero-filled with the configured shape.
class ScriptedModel final : public Model {
 public:
  ScriptedModel(ModelConfig config, ScriptedSchedule schedule)
      : config_(std::move(config)), schedule_(std::move(schedule)) {
    config_.validate();
    schedule_.validate();
    auto check_token = [&](TokenId t) {
      if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size)
        throw ConfigError("scripted token outside vocabulary");
    };
    for (const auto& e : schedule_.steps) {
      for (const auto& [pos, p] : e.predictions) check_token(p.token);
      for (const auto& c : e.conditionals) check_token(c.prediction.token);
    }
  }

  [[nodiscard]] const ModelConfig& config() const override { return config_; }
  [[nodiscard]] const ScriptedSchedule& schedule() const { return schedule_; }

  [[nodiscard]] ForwardResult forward(const ForwardInput& in) const override {
    check_forward_input(config_, in);
    const auto& layout = in.layout;
    const std::size_t n = layout.num_queries();
    const std::size_t n_ctx = layout.num_context_keys();
    const auto& entry = detail::entry_at(schedule_, in.step);

    std::vector<Position> positions;
    positions.reserve(n);
    for (const auto& q : layout.queries()) positions.push_back(q.position);
    ForwardResult result{LogitsView(positions, config_.vocab_size), KVBlock(config_.n_layers, n, config_.d_model)};

    // Leftmost row position per tag bounds the prefix region.
    std::map<BlockTag, Position> tag_start;
    for (const auto& q : layout.queries()) {
      auto [it, inserted] = tag_start.emplace(q.tag, q.position);
      if (!inserted) it->second = std::min(it->second, q.position);
    }

    std::vector<Position> decoded;
    for (std::size_t i = 0; i < n; ++i) {
      const Position pos = positions[i];
      const ScriptedPrediction* chosen = nullptr;
      if (!entry.conditionals.empty()) {
        decoded.clear();
        const Position start = tag_start[layout.queries()[i].tag];
        for (std::size_t k = 0; k < layout.num_keys(); ++k) {
          if (!layout.allows(i, k)) continue;
          const auto& key = layout.keys()[k];
          const bool is_decoded = (key.source == KeySource::shared) ||
                                  (key.source == KeySource::cache && key.position < start) ||
                                  (key.source == KeySource::block && in.tokens[k - n_ctx] != config_.mask_token_id);
          if (is_decoded) decoded.push_back(key.position);
        }
        std::sort(decoded.begin(), decoded.end());
        for (const auto& c : entry.conditionals) {
          if (c.position != pos) continue;
          const bool satisfied = std::all_of(c.unmasked.begin(), c.unmasked.end(), [&](Position p) {
            return std::binary_search(decoded.begin(), decoded.end(), p);
          });
          if (satisfied) {
            chosen = &c.prediction;
            break;
          }
        }
      }
      if (chosen == nullptr) {
        auto it = entry.predictions.find(pos);
        if (it != entry.predictions.end()) chosen = &it->second;
      }
      if (chosen == nullptr) {
        detail::write_default_logits(result.logits.row(i), config_.mask_token_id);
      } else {
        detail::write_scripted_logits(result.logits.row(i), *chosen, config_.vocab_size);
      }
    }
    return result;
  }

 private:
  ModelConfig config_;
  ScriptedSchedule schedule_;
};

}  // namespace dllm
