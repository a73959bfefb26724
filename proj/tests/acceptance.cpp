// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are fixed below.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "dllm/decoder.hpp"
#include "dllm/harness.hpp"
#include "dllm/metrics.hpp"
#include "dllm/speculative.hpp"
#include "support.hpp"

using namespace dllm;
namespace fs = std::filesystem;

namespace {

constexpr double kLogitTol = 1e-5;
constexpr int kSeeds = 50;
constexpr int kJumpScenarios = 12000;
constexpr double kTauLow = 0.45;
constexpr double kTauHigh = 0.55;
// prefill_time_frac of the reference scenario (see criterion 8), calibrated
// from the first run and locked.
constexpr double kPrefillFracGolden = 0.039985023167;
constexpr double kPrefillFracBand = 1e-6;

const ModelConfig kCfg;

struct Verdict {
  bool ok = true;
  std::string detail;

  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
};

int failures = 0;

void report(int n, const std::string& name, const Verdict& v) {
  std::printf("%s criterion %d: %s%s%s\n", v.ok ? "PASS" : "FAIL", n, name.c_str(), v.detail.empty() ? "" : " -- ",
              v.detail.c_str());
  std::fflush(stdout);
  if (!v.ok) ++failures;
}

double max_rel(std::span<const float> a, std::span<const float> b) { return dllm::testing::rel_err(a, b); }

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

bool same_decisions(const std::vector<Decision>& a, const std::vector<Decision>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].position != b[i].position || a[i].token != b[i].token) return false;
  }
  return true;
}

std::vector<TokenId> block_tokens(const DecodeState& s, BlockRange b) {
  return {s.tokens.begin() + static_cast<std::ptrdiff_t>(b.begin), s.tokens.begin() + static_cast<std::ptrdiff_t>(b.end)};
}

// 1. Cached block forward vs dense forward over the refresh-time snapshot.
Verdict cache_correctness() {
  Verdict v;
  const auto& model = dllm::testing::toy_model();
  double worst = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    auto [s, block] = dllm::testing::random_state(rng, kCfg);
    DualCache cache;
    (void)cache.refresh(model, s, block, 0);
    const CacheView view = cache_view(cache, nullptr, cache.epoch());
    const AttentionLayout layout = build_block_layout(block, view.key_entries());
    const ForwardResult cached = model.forward({block_tokens(s, block), layout, view, 0});
    std::vector<Position> positions;
    for (Position p = block.begin; p < block.end; ++p) positions.push_back(p);
    const LogitsView dense = dllm::testing::dense_rows(model, s, positions);
    for (std::size_t r = 0; r < positions.size(); ++r) worst = std::max(worst, max_rel(cached.logits.row(r), dense.row(r)));
  }
  if (worst > kLogitTol) v.fail("max rel err " + fmt(worst));
  else v.detail = "max rel err " + fmt(worst) + " over " + std::to_string(kSeeds) + " states";
  return v;
}

struct SpecCase {
  DecodeState state;
  BlockRange block;
  CandidateSet candidates;
  int stage = 1;
};

// Random mid-block state with candidates drawn from the masked positions.
std::optional<SpecCase> spec_case(std::mt19937_64& rng, int stage) {
  auto [s, block] = dllm::testing::random_state(rng, kCfg, 0.4, 0.1);
  std::vector<Position> masked;
  for (Position p = block.begin; p < block.end; ++p) {
    if (s.is_masked(p)) masked.push_back(p);
  }
  const bool has_decoded = masked.size() < block.size();
  if (masked.empty() || (stage == 2 && !has_decoded)) return std::nullopt;
  std::shuffle(masked.begin(), masked.end(), rng);
  const std::size_t k = std::min<std::size_t>(masked.size(), stage == 2 ? 1 + rng() % 4 : 1 + rng() % 2);
  CandidateSet c;
  for (std::size_t i = 0; i < k; ++i) {
    TokenId tok = 0;
    do {
      tok = static_cast<TokenId>(rng() % kCfg.vocab_size);
    } while (tok == kCfg.mask_token_id);
    c.candidates.push_back({masked[i], tok, 0.5F});
  }
  return SpecCase{s, block, c, stage};
}

template <typename Fn>
void for_spec_cases(int stage, std::uint64_t base, Fn&& fn) {
  std::mt19937_64 rng(base);
  int done = 0;
  while (done < kSeeds) {
    if (auto c = spec_case(rng, stage)) {
      fn(*c);
      ++done;
    }
  }
}

// 2. Batched speculative forward vs one forward per block.
Verdict mask_isolation() {
  Verdict v;
  const auto& model = dllm::testing::toy_model();
  const float threshold = 0.05F;
  double worst = 0.0;
  std::size_t accepted = 0;
  for (int stage : {1, 2}) {
    for_spec_cases(stage, 2000 + static_cast<std::uint64_t>(stage), [&](const SpecCase& c) {
      DualCache cache;
      (void)cache.refresh(model, c.state, c.block, 0);
      const SpecStepResult res = spec_step(model, c.state, cache, c.candidates, stage, {threshold, 1}, 0);
      std::optional<SharedKV> shared;
      if (stage == 2) shared = build_shared_kv(model, c.state, c.block, cache, 0);
      const CacheView view = cache_view(cache, shared ? &*shared : nullptr, cache.epoch());
      const auto tokens = spec_tokens(c.state, res.layout, res.spec_set);
      const ForwardResult batched = model.forward({tokens, res.layout, view, 0});

      for (BlockTag tag = 0; tag < res.spec_set.num_blocks(); ++tag) {
        AttentionLayout alone;
        std::vector<TokenId> part;
        const auto rows = res.layout.rows_with_tag(tag);
        for (std::size_t r : rows) {
          alone.push_query(res.layout.queries()[r].position, tag);
          part.push_back(tokens[r]);
        }
        alone.set_keys(view.key_entries());
        const ForwardResult single = model.forward({part, alone, view, 0});
        std::vector<std::size_t> masked_rows;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          worst = std::max(worst, max_rel(batched.logits.row(rows[i]), single.logits.row(i)));
          if (part[i] == kCfg.mask_token_id) masked_rows.push_back(i);
        }
        const StepOutcome own =
            accept_by_threshold(decide(single.logits.select(masked_rows), kCfg.mask_token_id), threshold);
        if (!same_decisions(own.accepted, res.per_block[tag].accepted)) v.fail("acceptance set differs");
        accepted += own.accepted.size();
      }
    });
  }
  if (worst > kLogitTol) v.fail("max rel err " + fmt(worst));
  if (v.ok)
    v.detail = "max rel err " + fmt(worst) + ", " + std::to_string(accepted) + " accepted tokens matched, " +
               std::to_string(2 * kSeeds) + " configurations";
  return v;
}

// 3. Stage-2 forward with SharedKV vs explicit substitution: block_0 is run
// on its own and the decoded rows' K/V are fed back as ordinary context.
Verdict shared_kv_correctness() {
  Verdict v;
  const auto& model = dllm::testing::toy_model();
  double worst = 0.0;
  for_spec_cases(2, 3000, [&](const SpecCase& c) {
    DualCache cache;
    (void)cache.refresh(model, c.state, c.block, 0);
    const SpecStepResult res = spec_step(model, c.state, cache, c.candidates, 2, {0.9F, 1}, 0);
    const SharedKV shared = build_shared_kv(model, c.state, c.block, cache, 0);
    const CacheView view = cache_view(cache, &shared, cache.epoch());
    const auto tokens = spec_tokens(c.state, res.layout, res.spec_set);
    const ForwardResult batched = model.forward({tokens, res.layout, view, 0});

    const CacheView plain = cache_view(cache, nullptr, cache.epoch());
    const ForwardResult block0 =
        model.forward({block_tokens(c.state, c.block), build_block_layout(c.block, plain.key_entries()), plain, 0});
    CacheView substituted(cache.epoch());
    for (const auto& e : plain.entries()) substituted.push(e.position, e.source, *e.block, e.row);
    for (Position p : c.state.decoded_in(c.block)) substituted.push(p, KeySource::cache, block0.kv, p - c.block.begin);

    for (BlockTag tag = 1; tag < res.spec_set.num_blocks(); ++tag) {
      AttentionLayout alone;
      std::vector<TokenId> part;
      const auto rows = res.layout.rows_with_tag(tag);
      for (std::size_t r : rows) {
        alone.push_query(res.layout.queries()[r].position, tag);
        part.push_back(tokens[r]);
      }
      alone.set_keys(substituted.key_entries());
      const ForwardResult oracle = model.forward({part, alone, substituted, 0});
      for (std::size_t i = 0; i < rows.size(); ++i)
        worst = std::max(worst, max_rel(batched.logits.row(rows[i]), oracle.logits.row(i)));
    }
  });
  if (worst > kLogitTol) v.fail("max rel err " + fmt(worst));
  else v.detail = "max rel err " + fmt(worst) + " over " + std::to_string(kSeeds) + " stage-2 states";
  return v;
}

// Ladder oracle written from the case analysis: the entry point is the
// longest run c1..cj that block_0 accepted (all such prefixes are lattice
// blocks); the walk extends the run one candidate at a time while the
// block holding the run accepted the next candidate. Without a run, the
// first other singleton block_0 accepted is adopted and not extended.
JumpResolution ladder_oracle(const std::vector<std::set<std::pair<Position, TokenId>>>& acc, const CandidateSet& c,
                             const std::map<std::vector<std::size_t>, BlockTag>& tag_of) {
  auto ok = [&](BlockTag tag, std::size_t i) { return acc[tag].count({c[i].position, c[i].token}) > 0; };
  std::size_t run = 0;
  while (run < c.size() && ok(0, run)) ++run;
  if (run > 0) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < run; ++i) members.push_back(i);
    std::size_t jumps = 1;
    while (members.size() < c.size() && ok(tag_of.at(members), members.size())) {
      members.push_back(members.size());
      ++jumps;
    }
    return {tag_of.at(members), jumps};
  }
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (ok(0, i)) return {tag_of.at({i}), 1};
  }
  return {kMainBlock, 0};
}

// 4. resolve_jump against the oracle on random acceptance patterns.
Verdict jump_resolution() {
  Verdict v;
  std::mt19937_64 rng(4000);
  std::size_t both = 0, chain = 0, chain_fail = 0, wrong_token = 0;
  for (int n = 0; n < kJumpScenarios && v.ok; ++n) {
    const int stage = n % 3 == 0 ? 1 : 2;
    const std::size_t k = stage == 1 ? 1 + rng() % 2 : std::vector<std::size_t>{1, 2, 3, 4}[rng() % 4];
    CandidateSet c;
    for (std::size_t i = 0; i < k; ++i) c.candidates.push_back({10 + 3 * i, static_cast<TokenId>(rng() % 100), 0.5F});
    const SpecSet spec = build_spec_set(c, stage);

    std::map<std::vector<std::size_t>, BlockTag> tag_of;
    for (const auto& b : spec.blocks) tag_of[b.members] = b.tag;
    std::vector<std::set<std::pair<Position, TokenId>>> acc(spec.num_blocks());
    std::vector<StepOutcome> results(spec.num_blocks());
    for (BlockTag tag = 0; tag < spec.num_blocks(); ++tag) {
      for (std::size_t i = 0; i < k; ++i) {
        if (tag != 0) {
          const auto& m = spec.block(tag).members;
          if (std::find(m.begin(), m.end(), i) != m.end()) continue;
        }
        const auto roll = rng() % 10;
        if (roll < 5) {
          results[tag].accepted.push_back(c[i]);
          acc[tag].insert({c[i].position, c[i].token});
        } else if (roll == 5) {
          results[tag].accepted.push_back({c[i].position, c[i].token + 1, 0.95F});
          ++wrong_token;
        }
      }
    }
    const JumpResolution got = resolve_jump(results, spec);
    const JumpResolution want = ladder_oracle(acc, c, tag_of);
    if (!(got == want)) {
      v.fail("scenario " + std::to_string(n) + ": tag " + std::to_string(got.adopted) + "/" +
             std::to_string(got.jump_count) + " vs oracle " + std::to_string(want.adopted) + "/" +
             std::to_string(want.jump_count));
    }
    if (stage == 1 && k == 2) {
      const bool a1 = acc[0].count({c[0].position, c[0].token}) > 0;
      const bool a2 = acc[0].count({c[1].position, c[1].token}) > 0;
      const BlockTag t1 = tag_of.at({0}), t12 = tag_of.at({0, 1});
      if (a1 && a2) {
        ++both;
        if (!(got == JumpResolution{t12, 1})) v.fail("both-accepted branch");
      } else if (a1) {
        if (acc[t1].count({c[1].position, c[1].token}) > 0) {
          ++chain;
          if (!(got == JumpResolution{t12, 2})) v.fail("chain-verify branch");
        } else {
          ++chain_fail;
          if (!(got == JumpResolution{t1, 1})) v.fail("chain-fail branch");
        }
      }
    }
  }
  if (v.ok && (both == 0 || chain == 0 || chain_fail == 0 || wrong_token == 0)) v.fail("a branch never occurred");
  const std::string counts = std::to_string(kJumpScenarios) + " scenarios; branches both=" + std::to_string(both) +
                             " chain=" + std::to_string(chain) + " chain_fail=" + std::to_string(chain_fail) +
                             " wrong_token=" + std::to_string(wrong_token);
  if (v.ok) v.detail = counts;
  return v;
}

// 5. tau-leaping transition.
Verdict tau_sampler() {
  Verdict v;
  const std::vector<TokenId> prompt = {1, 2, 3, 4};
  DecodeState s = DecodeState::start(prompt, 1000, 8, kCfg.mask_token_id);
  std::vector<Position> positions;
  for (Position p = 0; p < s.seq_len(); ++p) positions.push_back(p);
  LogitsView logits(positions, kCfg.vocab_size);
  std::mt19937_64 fill(5);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    for (float& x : logits.row(r)) x = static_cast<float>(uniform01(fill) * 4.0);
  }

  s.t = 0.5;
  std::mt19937_64 rng(55);
  const DecodeState half = tau_leaping_step(s, logits, 0.25, rng);
  std::size_t unmasked = 0;
  for (Position p = 4; p < half.seq_len(); ++p) {
    if (!half.is_masked(p)) ++unmasked;
    if (half.tokens[p] == kCfg.mask_token_id && !half.is_masked(p)) v.fail("mask token sampled");
  }
  const double frac = static_cast<double>(unmasked) / 1000.0;
  if (frac < kTauLow || frac > kTauHigh) v.fail("unmask fraction " + fmt(frac));

  const DecodeState all = tau_leaping_step(s, logits, 0.0, rng);
  for (Position p = 4; p < all.seq_len(); ++p) {
    if (all.is_masked(p)) v.fail("s = 0 left a position masked");
  }

  // Decoded positions keep their tokens through further transitions.
  DecodeState cur = half;
  for (double next : {0.2, 0.1, 0.05, 0.0}) {
    const DecodeState after = tau_leaping_step(cur, logits, next, rng);
    for (Position p = 0; p < cur.seq_len(); ++p) {
      if (!cur.is_masked(p) && after.tokens[p] != cur.tokens[p]) v.fail("decoded token changed");
    }
    cur = after;
  }
  if (v.ok) v.detail = "unmask fraction " + fmt(frac) + " at t=0.5, s=0.25";
  return v;
}

ScriptedSchedule alp_schedule() {
  ScriptedSchedule sched = dllm::testing::chain_schedule(16, 256, 32);
  auto& e = sched.steps[0];
  const Position eos = 16 + 87;
  e.predictions[eos] = {kCfg.eos_token_id, 0.99F};
  std::erase_if(e.conditionals, [&](const ConditionalPrediction& c) { return c.position == eos; });
  return sched;
}

// 6. Adaptive length prediction.
Verdict alp_behavior() {
  Verdict v;
  const std::vector<TokenId> prompt(16, 3);
  const ScriptedModel model(kCfg, alp_schedule());
  RunConfig cfg;
  cfg.gen_length = 256;
  cfg.block_size = 32;
  cfg.strategy = Strategy::odb;

  std::size_t last_len = 16 + 256;
  std::map<Position, TokenId> committed;
  const Trajectory t = decode(model, prompt, cfg, [&](const StepRecord& r, const AttentionLayout&) {
    if (r.seq_len > last_len) v.fail("sequence grew at step " + std::to_string(r.index));
    last_len = r.seq_len;
    for (const auto& [p, tok] : committed) {
      if (p >= r.seq_len) v.fail("decoded position " + std::to_string(p) + " cut");
    }
    for (const auto& d : r.accepted) committed[d.position] = d.token;
  });
  if (t.final_gen_length != 96) v.fail("final gen_length " + std::to_string(t.final_gen_length));
  for (const auto& e : t.truncations) {
    if (e.new_gen_length > e.old_gen_length) v.fail("gen_length increased");
  }
  for (const auto& [p, tok] : committed) {
    if (p >= t.tokens.size() || t.tokens[p] != tok) v.fail("committed token lost at " + std::to_string(p));
  }

  cfg.truncate_threshold = 1.1F;
  cfg.speculation = false;
  const Trajectory odb = decode(model, prompt, cfg);
  cfg.strategy = Strategy::fast;
  const Trajectory fast = decode(model, prompt, cfg);
  const bool identical = odb.steps == fast.steps && odb.tokens == fast.tokens && odb.truncations == fast.truncations &&
                         odb.final_gen_length == fast.final_gen_length;
  if (!identical) v.fail("threshold 1.1 run differs from Fast");
  if (v.ok)
    v.detail = "256 -> " + std::to_string(t.final_gen_length) + ", " + std::to_string(committed.size()) +
               " committed tokens kept, threshold 1.1 identical to Fast over " + std::to_string(fast.steps.size()) +
               " steps";
  return v;
}

// 7. NFE accounting on schedules where candidates verify one step later.
Verdict nfe_accounting() {
  Verdict v;
  const std::vector<TokenId> prompt(16, 3);
  std::string detail;
  for (std::size_t gen : {64U, 128U, 256U}) {
    const ScriptedModel model(kCfg, dllm::testing::chain_schedule(16, gen, 32));
    RunConfig cfg;
    cfg.gen_length = gen;
    std::map<Strategy, MetricsReport> m;
    for (Strategy s : {Strategy::vanilla, Strategy::fast, Strategy::odb}) {
      cfg.strategy = s;
      const Trajectory t = decode(model, prompt, cfg);
      m[s] = trajectory_metrics(t, HardwareProfile{});
      std::size_t jumps = 0;
      for (const auto& st : t.steps) jumps += st.jump_count;
      if (m[s].eff_nfe != m[s].nfe + jumps) v.fail("Eff_NFE != NFE + jumps");
    }
    cfg.strategy = Strategy::odb;
    cfg.speculation = false;
    const auto plain = trajectory_metrics(decode(model, prompt, cfg), HardwareProfile{});
    for (const MetricsReport* r : std::initializer_list<const MetricsReport*>{&m[Strategy::vanilla], &m[Strategy::fast], &plain}) {
      if (r->eff_nfe != r->nfe) v.fail("non-speculative Eff_NFE != NFE");
    }
    if (!(m[Strategy::odb].nfe < m[Strategy::fast].nfe)) v.fail("ODB NFE not below Fast at gen " + std::to_string(gen));
    detail += (detail.empty() ? "" : "; ") + std::string("gen ") + std::to_string(gen) + ": fast " +
              std::to_string(m[Strategy::fast].nfe) + ", odb " + std::to_string(m[Strategy::odb].nfe) + " (eff " +
              std::to_string(m[Strategy::odb].eff_nfe) + ")";
  }
  if (v.ok) v.detail = detail;
  return v;
}

// Reference scenario: three generated tasks (prompt 16, seed 0), toy model,
// Fast, gen 256, block 32, reference profile.
std::vector<TaskRecord> reference_tasks(const fs::path& dir) {
  GenTasksOptions g;
  g.tasks_out = (dir / "tasks.jsonl").string();
  std::ostringstream err;
  if (cmd_gen_tasks(g, err) != kExitOk) throw IoError("gen-tasks failed: " + err.str());
  std::ifstream in(g.tasks_out);
  return parse_tasks(in, g.tasks_out);
}

// 8. Cost model.
Verdict cost_model(const fs::path& dir) {
  Verdict v;
  const std::uint64_t d = kCfg.d_model, L = kCfg.n_layers, ff = kCfg.d_ff, V = kCfg.vocab_size, T = 32, C = 256;
  const std::uint64_t P = V * d + L * (4 * d * d + 2 * d * ff + 2 * d) + d + d * V;
  const auto flops = static_cast<double>(L * (8 * T * d * d + 4 * T * C * d + 4 * T * d * ff) + 2 * T * d * V);
  const auto bytes = static_cast<double>(4 * (P + 2 * L * C * d + 2 * L * T * d));
  const CostRecord r = cost_of_forward(kCfg, T, C, Phase::decode, HardwareProfile{});
  auto within_ulp = [](double a, double b) { return a == b || std::nextafter(a, b) == b; };
  if (!within_ulp(r.flops, flops) || !within_ulp(r.bytes, bytes)) v.fail("formula mismatch at T=32, C=256");

  const auto& model = dllm::testing::toy_model();
  RunConfig cfg;
  cfg.strategy = Strategy::fast;
  double frac_time = 0.0, total_time = 0.0;
  for (const auto& task : reference_tasks(dir)) {
    const Trajectory t = decode(model, task.prompt_tokens, cfg);
    const MetricsReport m = trajectory_metrics(t, HardwareProfile{});
    if (!(m.prefill.mean_ai > m.decode.mean_ai)) v.fail("prefill AI not above decode AI on " + task.id);
    frac_time += m.prefill.time_s;
    total_time += m.total_est_time_s;
  }
  const double frac = frac_time / total_time;
  if (std::abs(frac - kPrefillFracGolden) > kPrefillFracBand) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "prefill_time_frac %.12f outside golden %.12f", frac, kPrefillFracGolden);
    v.fail(buf);
  }
  if (v.ok) v.detail = "exact at T=32, C=256; prefill_time_frac " + fmt(frac);
  return v;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

// 9. Two identical runs produce byte-identical directories.
Verdict determinism(const fs::path& dir) {
  Verdict v;
  GenTasksOptions g;
  g.count = 3;
  g.seed = 9;
  g.tasks_out = (dir / "det_tasks.jsonl").string();
  std::ostringstream err;
  if (cmd_gen_tasks(g, err) != kExitOk) v.fail(err.str());
  std::map<std::string, std::string> trees[2];
  for (int i = 0; i < 2; ++i) {
    HarnessOptions o;
    o.tasks_path = g.tasks_out;
    o.out_dir = (dir / ("det" + std::to_string(i))).string();
    o.strategies = {"odb"};
    o.gen_length = 128;
    o.dump_mask = true;
    if (cmd_run(o, err) != kExitOk) v.fail("run failed: " + err.str());
    trees[i] = read_tree(o.out_dir);
  }
  if (trees[0].empty() || trees[0] != trees[1]) v.fail("output directories differ");
  if (v.ok) v.detail = std::to_string(trees[0].size()) + " files identical";
  return v;
}

void run(int n, const std::string& name, const std::function<Verdict()>& fn) {
  try {
    report(n, name, fn());
  } catch (const std::exception& e) {
    Verdict v;
    v.fail(std::string("exception: ") + e.what());
    report(n, name, v);
  }
}

}  // namespace

int main() {
  const fs::path dir = fs::path(DLLM_ACCEPT_TMP);
  fs::remove_all(dir);
  fs::create_directories(dir);

  run(1, "cache correctness", cache_correctness);
  run(2, "mask isolation", mask_isolation);
  run(3, "shared-KV correctness", shared_kv_correctness);
  run(4, "jump resolution", jump_resolution);
  run(5, "tau-leaping sampler", tau_sampler);
  run(6, "adaptive length prediction", alp_behavior);
  run(7, "NFE accounting", nfe_accounting);
  run(8, "cost model", [&] { return cost_model(dir); });
  run(9, "end-to-end determinism", [&] { return determinism(dir); });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
