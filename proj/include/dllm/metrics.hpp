#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dllm/error.hpp"
#include "dllm/model.hpp"
#include "dllm/trajectory.hpp"

namespace dllm {

struct HardwareProfile {
  std::string name = "reference";
  double peak_flops = 1.5e14;    // FLOP/s
  double mem_bandwidth = 1.0e12;  // bytes/s

  [[nodiscard]] double balance() const { return peak_flops / mem_bandwidth; }

  void validate() const {
    if (!(peak_flops > 0.0) || !(mem_bandwidth > 0.0)) throw ConfigError("hardware profile rates must be positive");
  }
};

enum class Bound : std::uint8_t { compute, memory };

inline const char* to_string(Bound b) { return b == Bound::compute ? "compute" : "memory"; }

struct CostRecord {
  Phase phase = Phase::decode;
  std::size_t query_tokens = 0;    // T
  std::size_t context_tokens = 0;  // C
  double flops = 0.0;
  double bytes = 0.0;
  double arithmetic_intensity = 0.0;
  double est_time_s = 0.0;
  Bound bound = Bound::memory;
};

// First-order roofline cost of one forward with T query rows attending over
// C key entries:
//
//   flops = L * (8 T d^2 + 4 T C d + 4 T d d_ff) + 2 T d V
//   bytes = 4 * (P + 2 L C d + 2 L T d)
//
// (q/k/v/o projections, QK^T and PV, the two FFN matmuls, the vocab
// projection; 32-bit weights read once, K/V read over the context, K/V
// written for the queries; P = parameter count.)
inline CostRecord cost_of_forward(const ModelConfig& cfg, std::size_t T, std::size_t C, Phase phase,
                                  const HardwareProfile& profile) {
  if (T == 0) throw PreconditionError("forward needs at least one query token");
  if (C < T) throw PreconditionError("context tokens must be at least the query tokens");
  profile.validate();
  const auto t = static_cast<double>(T);
  const auto c = static_cast<double>(C);
  const auto d = static_cast<double>(cfg.d_model);
  const auto layers = static_cast<double>(cfg.n_layers);
  const auto ff = static_cast<double>(cfg.d_ff);
  const auto vocab = static_cast<double>(cfg.vocab_size);
  const auto params = static_cast<double>(count_params(cfg));

  CostRecord r;
  r.phase = phase;
  r.query_tokens = T;
  r.context_tokens = C;
  r.flops = layers * (8.0 * t * d * d + 4.0 * t * c * d + 4.0 * t * d * ff) + 2.0 * t * d * vocab;
  r.bytes = 4.0 * (params + 2.0 * layers * c * d + 2.0 * layers * t * d);
  r.arithmetic_intensity = r.flops / r.bytes;
  r.est_time_s = std::max(r.flops / profile.peak_flops, r.bytes / profile.mem_bandwidth);
  r.bound = r.arithmetic_intensity >= profile.balance() ? Bound::compute : Bound::memory;
  return r;
}

inline std::vector<CostRecord> cost_records(const Trajectory& traj, const HardwareProfile& profile) {
  std::vector<CostRecord> out;
  out.reserve(traj.steps.size());
  for (const auto& s : traj.steps) out.push_back(cost_of_forward(traj.model, s.query_tokens, s.context_tokens, s.phase, profile));
  return out;
}

struct PhaseSummary {
  std::size_t steps = 0;
  double mean_ai = 0.0;
  double time_s = 0.0;
  std::size_t compute_bound = 0;
  std::size_t memory_bound = 0;
};

struct MetricsReport {
  std::size_t nfe = 0;
  std::size_t eff_nfe = 0;
  std::size_t prefill_steps = 0;
  std::size_t decode_steps = 0;
  std::size_t blocks_evaluated = 0;
  std::size_t jumps = 0;
  std::size_t tokens_generated = 0;
  double prefill_time_frac = 0.0;
  double total_est_time_s = 0.0;
  double total_flops = 0.0;
  double total_bytes = 0.0;
  PhaseSummary prefill;
  PhaseSummary decode;
  std::vector<TruncationEvent> truncations;
};

// NFE counts forward invocations (a batched speculative forward is one);
// Eff_NFE adds every adopted jump.
inline MetricsReport trajectory_metrics(const Trajectory& traj, const HardwareProfile& profile) {
  if (traj.steps.empty()) throw PreconditionError("empty trajectory");
  const auto costs = cost_records(traj, profile);
  MetricsReport m;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const auto& s = traj.steps[i];
    const auto& c = costs[i];
    ++m.nfe;
    m.jumps += s.jump_count;
    m.blocks_evaluated += s.blocks_evaluated;
    m.total_est_time_s += c.est_time_s;
    m.total_flops += c.flops;
    m.total_bytes += c.bytes;
    PhaseSummary& ph = s.phase == Phase::prefill ? m.prefill : m.decode;
    ++ph.steps;
    ph.mean_ai += c.arithmetic_intensity;
    ph.time_s += c.est_time_s;
    ++(c.bound == Bound::compute ? ph.compute_bound : ph.memory_bound);
    for (const auto& a : s.accepted) {
      if (a.position >= traj.prompt_len) ++m.tokens_generated;
    }
  }
  for (PhaseSummary* ph : {&m.prefill, &m.decode}) {
    if (ph->steps > 0) ph->mean_ai /= static_cast<double>(ph->steps);
  }
  m.eff_nfe = m.nfe + m.jumps;
  m.prefill_steps = m.prefill.steps;
  m.decode_steps = m.decode.steps;
  m.prefill_time_frac = m.total_est_time_s > 0.0 ? m.prefill.time_s / m.total_est_time_s : 0.0;
  m.truncations = traj.truncations;
  return m;
}

// Modeled time of `a` over modeled time of `b`; above 1 means `b` is faster.
inline double estimate_speedup(const Trajectory& a, const Trajectory& b, const HardwareProfile& profile) {
  const double ta = trajectory_metrics(a, profile).total_est_time_s;
  const double tb = trajectory_metrics(b, profile).total_est_time_s;
  if (!(ta > 0.0) || !(tb > 0.0)) throw PreconditionError("trajectory with zero modeled time");
  return ta / tb;
}

}  // namespace dllm
