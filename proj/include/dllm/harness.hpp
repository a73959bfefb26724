#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dllm/decoder.hpp"
#include "dllm/io.hpp"
#include "dllm/metrics.hpp"
#include "dllm/scripted_model.hpp"
#include "dllm/toy_model.hpp"

namespace dllm {

// Process exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,      // bad flags or combination of flags
  kExitInput = 2,      // unparsable or invalid input document
  kExitIo = 3,         // file system failure
  kExitInvariant = 4,  // decode loop invariant violated
};

struct HarnessOptions {
  std::optional<std::string> config_path;        // RunConfig JSON
  std::optional<std::string> model_config_path;  // ModelConfig JSON
  std::optional<std::string> profile_path;
  std::optional<std::string> schedule_path;  // replay a scripted schedule instead of the toy model
  std::string tasks_path;
  std::string out_dir;
  std::vector<std::string> strategies;

  std::optional<std::size_t> gen_length;
  std::optional<std::size_t> block_size;
  std::optional<float> accept_threshold;
  std::optional<float> truncate_threshold;
  std::optional<std::size_t> stage2_min_decoded;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> tau_steps;
  bool no_speculation = false;
  bool dump_mask = false;
};

namespace detail {

struct Inputs {
  RunConfig run;
  ModelConfig model_config;
  std::unique_ptr<Model> model;
  HardwareProfile profile;
  std::vector<TaskRecord> tasks;
};

inline Inputs load_inputs(const HarnessOptions& o) {
  Inputs in;
  if (o.config_path) in.run = parse_run_config(read_json_file(*o.config_path), {}, *o.config_path);
  if (o.gen_length) in.run.gen_length = *o.gen_length;
  if (o.block_size) in.run.block_size = *o.block_size;
  if (o.accept_threshold) in.run.accept_threshold = *o.accept_threshold;
  if (o.truncate_threshold) in.run.truncate_threshold = *o.truncate_threshold;
  if (o.stage2_min_decoded) in.run.stage2_min_decoded = *o.stage2_min_decoded;
  if (o.seed) in.run.seed = *o.seed;
  if (o.tau_steps) in.run.tau_steps = *o.tau_steps;
  if (o.no_speculation) in.run.speculation = false;

  if (o.model_config_path) in.model_config = parse_model_config(read_json_file(*o.model_config_path), *o.model_config_path);
  if (o.profile_path) in.profile = parse_profile(read_json_file(*o.profile_path), *o.profile_path);

  if (o.schedule_path) {
    in.model = std::make_unique<ScriptedModel>(
        in.model_config, parse_schedule(read_json_file(*o.schedule_path), in.model_config.eos_token_id, *o.schedule_path));
  } else {
    in.model = std::make_unique<ToyModel>(in.model_config);
  }

  std::ifstream tasks(o.tasks_path, std::ios::binary);
  if (!tasks) throw IoError("cannot open " + o.tasks_path);
  in.tasks = parse_tasks(tasks, o.tasks_path);
  for (const auto& t : in.tasks) {
    for (TokenId tok : t.prompt_tokens) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= in.model_config.vocab_size || tok == in.model_config.mask_token_id)
        throw ParseError(o.tasks_path + ": task " + t.id + ": prompt token " + std::to_string(tok) +
                         " outside vocabulary or equal to the mask token");
    }
  }
  return in;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline std::string csv_text(const std::vector<CostRecord>& records) {
  std::ostringstream ss;
  write_cost_csv(ss, records);
  return ss.str();
}

// Runs `fn`, mapping failures onto exit codes with a diagnostic on `err`.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kExitInput;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    err << "error: decode failed: " << e.what() << '\n';
    return kExitInvariant;
  }
}

// Decodes one task, keeping the last step around for diagnostics and
// optionally writing the first layout of each kind as a mask CSV.
inline Trajectory decode_task(const Inputs& in, const RunConfig& run, const TaskRecord& task,
                              const std::filesystem::path* mask_dir, std::ostream& err) {
  std::optional<StepRecord> last;
  bool seen_block = false;
  bool seen_stage[3] = {false, false, false};
  ForwardObserver observer = [&](const StepRecord& r, const AttentionLayout& layout) {
    last = r;
    if (mask_dir == nullptr || r.phase != Phase::decode) return;
    std::string name;
    if (r.stage == 0 && !seen_block) {
      seen_block = true;
      name = task.id + ".mask.block.csv";
    } else if (r.stage > 0 && !seen_stage[r.stage]) {
      seen_stage[r.stage] = true;
      name = task.id + ".mask.stage" + std::to_string(r.stage) + ".csv";
    }
    if (name.empty()) return;
    std::ostringstream ss;
    write_mask_csv(ss, layout);
    write_text_file((*mask_dir / name).string(), ss.str());
  };
  try {
    return decode(*in.model, task.prompt_tokens, run, observer);
  } catch (const Error&) {
    err << "task " << task.id << ": decode aborted";
    if (last) err << " after step " << dump(to_json(*last));
    err << '\n';
    throw;
  }
}

}  // namespace detail

// Decodes every task under one strategy and writes
//   <out>/<id>.trajectory.json   <out>/summary.json
//   <out>/metrics.csv            <out>/roofline.csv (per-step costs, all tasks)
inline int cmd_run(const HarnessOptions& o, std::ostream& err) {
  return detail::guarded(err, [&]() -> int {
    detail::Inputs in = detail::load_inputs(o);
    if (o.strategies.size() > 1) {
      err << "error: run takes a single --strategy\n";
      return kExitUsage;
    }
    if (!o.strategies.empty()) in.run.strategy = parse_strategy(o.strategies.front());
    in.run.validate();

    const std::filesystem::path out(o.out_dir);
    std::filesystem::create_directories(out);
    std::ostringstream metrics_csv;
    std::ostringstream roofline_csv;
    metrics_csv << "task,strategy,nfe,eff_nfe,prefill_steps,decode_steps,blocks_evaluated,jumps,tokens_generated,"
                   "final_gen_length,truncations,prefill_time_frac,total_est_time_s\n";
    json per_task = json::array();
    double total_time = 0.0;
    double prefill_time = 0.0;
    std::size_t nfe = 0;
    std::size_t eff_nfe = 0;
    for (const auto& task : in.tasks) {
      const Trajectory traj = detail::decode_task(in, in.run, task, o.dump_mask ? &out : nullptr, err);
      const MetricsReport m = trajectory_metrics(traj, in.profile);
      write_text_file((out / (task.id + ".trajectory.json")).string(), detail::dump(to_json(traj)));
      const auto costs = cost_records(traj, in.profile);
      std::istringstream rows(detail::csv_text(costs));
      std::string line;
      std::getline(rows, line);
      if (roofline_csv.tellp() == 0) roofline_csv << "task," << line << '\n';
      while (std::getline(rows, line)) roofline_csv << task.id << ',' << line << '\n';
      metrics_csv << task.id << ',' << to_string(traj.strategy) << ',' << m.nfe << ',' << m.eff_nfe << ','
                  << m.prefill_steps << ',' << m.decode_steps << ',' << m.blocks_evaluated << ',' << m.jumps << ','
                  << m.tokens_generated << ',' << traj.final_gen_length << ',' << m.truncations.size() << ','
                  << format_double(m.prefill_time_frac) << ',' << format_double(m.total_est_time_s) << '\n';
      per_task.push_back({{"id", task.id}, {"final_gen_length", traj.final_gen_length}, {"metrics", to_json(m)}});
      total_time += m.total_est_time_s;
      prefill_time += m.prefill.time_s;
      nfe += m.nfe;
      eff_nfe += m.eff_nfe;
    }
    json summary = {{"run_config", to_json(in.run)},
                    {"model", to_json(in.model_config)},
                    {"model_kind", o.schedule_path ? "scripted" : "toy"},
                    {"profile", to_json(in.profile)},
                    {"cost_model", kCostModelDescription},
                    {"tasks", per_task},
                    {"aggregate",
                     {{"tasks", in.tasks.size()},
                      {"nfe", nfe},
                      {"eff_nfe", eff_nfe},
                      {"total_est_time_s", total_time},
                      {"prefill_time_frac", total_time > 0.0 ? prefill_time / total_time : 0.0}}}};
    write_text_file((out / "metrics.csv").string(), metrics_csv.str());
    write_text_file((out / "roofline.csv").string(), roofline_csv.str());
    write_text_file((out / "summary.json").string(), detail::dump(summary));
    return kExitOk;
  });
}

// Decodes every task under each strategy and tabulates NFE, Eff_NFE,
// tokens, truncations, modeled time and pairwise speedups ("b/a" is the
// modeled time of a over that of b, for every later b).
inline int cmd_compare(const HarnessOptions& o, std::ostream& err) {
  return detail::guarded(err, [&]() -> int {
    if (o.strategies.size() < 2) {
      err << "error: compare needs at least two strategies\n";
      return kExitUsage;
    }
    std::vector<Strategy> strategies;
    for (const auto& s : o.strategies) {
      const Strategy st = parse_strategy(s);
      if (std::find(strategies.begin(), strategies.end(), st) != strategies.end()) {
        err << "error: strategy '" << s << "' listed twice\n";
        return kExitUsage;
      }
      strategies.push_back(st);
    }
    detail::Inputs in = detail::load_inputs(o);
    in.run.validate();

    const std::filesystem::path out(o.out_dir);
    std::filesystem::create_directories(out);
    std::ostringstream csv;
    csv << "task";
    for (Strategy s : strategies) {
      const std::string n = to_string(s);
      csv << ',' << n << ".nfe," << n << ".eff_nfe," << n << ".tokens," << n << ".truncations," << n << ".est_time_s";
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t b = 1; b < strategies.size(); ++b) {
      for (std::size_t a = 0; a < b; ++a) pairs.emplace_back(a, b);
    }
    for (auto [a, b] : pairs) csv << ',' << to_string(strategies[b]) << '/' << to_string(strategies[a]);
    csv << '\n';

    std::vector<MetricsReport> totals(strategies.size());
    std::vector<std::size_t> tokens_total(strategies.size(), 0);
    std::vector<std::size_t> trunc_total(strategies.size(), 0);
    json rows = json::array();
    for (const auto& task : in.tasks) {
      std::vector<MetricsReport> reports;
      std::vector<Trajectory> trajs;
      for (Strategy s : strategies) {
        RunConfig run = in.run;
        run.strategy = s;
        trajs.push_back(detail::decode_task(in, run, task, nullptr, err));
        reports.push_back(trajectory_metrics(trajs.back(), in.profile));
        const std::filesystem::path dir = out / to_string(s);
        std::filesystem::create_directories(dir);
        write_text_file((dir / (task.id + ".trajectory.json")).string(), detail::dump(to_json(trajs.back())));
      }
      csv << task.id;
      json row = {{"task", task.id}};
      for (std::size_t i = 0; i < strategies.size(); ++i) {
        const auto& m = reports[i];
        csv << ',' << m.nfe << ',' << m.eff_nfe << ',' << m.tokens_generated << ',' << m.truncations.size() << ','
            << format_double(m.total_est_time_s);
        row[to_string(strategies[i])] = {{"nfe", m.nfe},
                                         {"eff_nfe", m.eff_nfe},
                                         {"tokens", m.tokens_generated},
                                         {"truncations", m.truncations.size()},
                                         {"est_time_s", m.total_est_time_s}};
        totals[i].nfe += m.nfe;
        totals[i].eff_nfe += m.eff_nfe;
        totals[i].total_est_time_s += m.total_est_time_s;
        tokens_total[i] += m.tokens_generated;
        trunc_total[i] += m.truncations.size();
      }
      json speedups = json::object();
      for (auto [a, b] : pairs) {
        const double s = estimate_speedup(trajs[a], trajs[b], in.profile);
        csv << ',' << format_double(s);
        speedups[std::string(to_string(strategies[b])) + "/" + to_string(strategies[a])] = s;
      }
      row["speedup"] = speedups;
      rows.push_back(row);
      csv << '\n';
    }

    csv << "ALL";
    json aggregate = json::object();
    for (std::size_t i = 0; i < strategies.size(); ++i) {
      csv << ',' << totals[i].nfe << ',' << totals[i].eff_nfe << ',' << tokens_total[i] << ',' << trunc_total[i] << ','
          << format_double(totals[i].total_est_time_s);
      aggregate[to_string(strategies[i])] = {{"nfe", totals[i].nfe},
                                             {"eff_nfe", totals[i].eff_nfe},
                                             {"tokens", tokens_total[i]},
                                             {"truncations", trunc_total[i]},
                                             {"est_time_s", totals[i].total_est_time_s}};
    }
    json agg_speedups = json::object();
    for (auto [a, b] : pairs) {
      const double s = totals[a].total_est_time_s / totals[b].total_est_time_s;
      csv << ',' << format_double(s);
      agg_speedups[std::string(to_string(strategies[b])) + "/" + to_string(strategies[a])] = s;
    }
    aggregate["speedup"] = agg_speedups;
    csv << '\n';

    json doc = {{"run_config", to_json(in.run)},
                {"model", to_json(in.model_config)},
                {"profile", to_json(in.profile)},
                {"cost_model", kCostModelDescription},
                {"tasks", rows},
                {"aggregate", aggregate}};
    write_text_file((out / "compare.csv").string(), csv.str());
    write_text_file((out / "compare.json").string(), detail::dump(doc));
    return kExitOk;
  });
}

// Per-step cost records for plotting plus a phase summary:
//   <out>/<id>.roofline.csv    <out>/roofline_summary.json
inline int cmd_roofline(const HarnessOptions& o, std::ostream& err) {
  return detail::guarded(err, [&]() -> int {
    detail::Inputs in = detail::load_inputs(o);
    if (o.strategies.size() > 1) {
      err << "error: roofline takes a single --strategy\n";
      return kExitUsage;
    }
    if (!o.strategies.empty()) in.run.strategy = parse_strategy(o.strategies.front());
    in.run.validate();

    const std::filesystem::path out(o.out_dir);
    std::filesystem::create_directories(out);
    json tasks = json::array();
    PhaseSummary prefill;
    PhaseSummary decode_phase;
    double prefill_ai = 0.0;
    double decode_ai = 0.0;
    for (const auto& task : in.tasks) {
      const Trajectory traj = detail::decode_task(in, in.run, task, o.dump_mask ? &out : nullptr, err);
      const auto records = cost_records(traj, in.profile);
      write_text_file((out / (task.id + ".roofline.csv")).string(), detail::csv_text(records));
      const MetricsReport m = trajectory_metrics(traj, in.profile);
      tasks.push_back({{"id", task.id}, {"prefill", to_json(m.prefill)}, {"decode", to_json(m.decode)}});
      for (const auto& r : records) {
        PhaseSummary& ph = r.phase == Phase::prefill ? prefill : decode_phase;
        (r.phase == Phase::prefill ? prefill_ai : decode_ai) += r.arithmetic_intensity;
        ++ph.steps;
        ph.time_s += r.est_time_s;
        ++(r.bound == Bound::compute ? ph.compute_bound : ph.memory_bound);
      }
    }
    if (prefill.steps > 0) prefill.mean_ai = prefill_ai / static_cast<double>(prefill.steps);
    if (decode_phase.steps > 0) decode_phase.mean_ai = decode_ai / static_cast<double>(decode_phase.steps);
    auto phase_json = [&](const PhaseSummary& p) {
      json j = to_json(p);
      j["bound"] = p.steps == 0 ? "none" : (p.mean_ai >= in.profile.balance() ? "compute" : "memory");
      return j;
    };
    json doc = {{"strategy", to_string(in.run.strategy)},
                {"profile", to_json(in.profile)},
                {"cost_model", kCostModelDescription},
                {"phases", {{"prefill", phase_json(prefill)}, {"decode", phase_json(decode_phase)}}},
                {"tasks", tasks}};
    write_text_file((out / "roofline_summary.json").string(), detail::dump(doc));
    return kExitOk;
  });
}

struct GenTasksOptions {
  std::size_t count = 3;
  std::size_t prompt_len = 16;
  std::size_t gen_length = 256;
  std::uint64_t seed = 0;
  std::optional<std::string> model_config_path;
  std::string tasks_out;
  // Scripted schedule with a confident EOS at this response offset.
  std::optional<std::size_t> eos_offset;
  std::optional<std::string> schedule_out;
  float eos_confidence = 0.99F;
};

// Synthetic schedule for length and speculation experiments: content
// tokens up to the EOS offset with seeded confidences, EOS at the offset,
// low-confidence EOS padding after it. Every content position becomes
// confident once its left neighbour is decoded.
inline ScriptedSchedule make_synthetic_schedule(const ModelConfig& model, std::size_t prompt_len, std::size_t gen_length,
                                                std::size_t eos_offset, float eos_confidence, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick_token = [&]() {
    while (true) {
      const auto t = static_cast<TokenId>(rng() % model.vocab_size);
      if (t != model.mask_token_id && t != model.eos_token_id) return t;
    }
  };
  ScheduleEntry entry;
  for (std::size_t off = 0; off < gen_length; ++off) {
    const Position pos = prompt_len + off;
    if (off < eos_offset) {
      const TokenId tok = pick_token();
      const auto conf = static_cast<float>(0.3 + 0.65 * uniform01(rng));
      entry.predictions[pos] = {tok, conf};
      if (off > 0) entry.conditionals.push_back({{pos - 1}, pos, {tok, 0.97F}});
    } else if (off == eos_offset) {
      entry.predictions[pos] = {model.eos_token_id, eos_confidence};
    } else {
      entry.predictions[pos] = {model.eos_token_id, 0.6F};
    }
  }
  return {{std::move(entry)}};
}

inline int cmd_gen_tasks(const GenTasksOptions& o, std::ostream& err) {
  return detail::guarded(err, [&]() -> int {
    ModelConfig model;
    if (o.model_config_path) model = parse_model_config(read_json_file(*o.model_config_path), *o.model_config_path);
    model.validate();
    if (o.count == 0 || o.prompt_len == 0) {
      err << "error: --count and --prompt-len must be positive\n";
      return kExitUsage;
    }
    if (o.schedule_out && !o.eos_offset) {
      err << "error: --schedule-out requires --eos-offset\n";
      return kExitUsage;
    }
    std::mt19937_64 rng(o.seed);
    std::ostringstream lines;
    for (std::size_t i = 0; i < o.count; ++i) {
      TaskRecord t;
      t.id = "task" + std::to_string(i);
      for (std::size_t j = 0; j < o.prompt_len; ++j) {
        TokenId tok = 0;
        do {
          tok = static_cast<TokenId>(rng() % model.vocab_size);
        } while (tok == model.mask_token_id || tok == model.eos_token_id);
        t.prompt_tokens.push_back(tok);
      }
      if (o.eos_offset) t.note = "scripted eos at response offset " + std::to_string(*o.eos_offset);
      lines << to_json(t).dump() << '\n';
    }
    write_text_file(o.tasks_out, lines.str());
    if (o.schedule_out) {
      const auto sched = make_synthetic_schedule(model, o.prompt_len, o.gen_length, *o.eos_offset, o.eos_confidence, o.seed);
      write_text_file(*o.schedule_out, detail::dump(to_json(sched)));
    }
    return kExitOk;
  });
}

struct DumpMaskOptions {
  std::size_t block_size = 32;
  int stage = 0;  // 0 = plain block layout
  std::size_t context = 0;  // cache keys at positions [0, context) outside the block
  std::size_t block_begin = 0;
  std::vector<std::size_t> decoded;     // block-relative offsets
  std::vector<std::size_t> candidates;  // block-relative offsets
  std::string out;
};

inline AttentionLayout mask_layout(const DumpMaskOptions& o) {
  const BlockRange block{o.block_begin, o.block_begin + o.block_size};
  std::vector<KeyEntry> context;
  for (Position p = 0; p < o.context; ++p) {
    if (!block.contains(p)) context.push_back({p, KeySource::cache, kMainBlock});
  }
  if (o.stage == 0) return build_block_layout(block, context);

  CandidateSet cands;
  for (std::size_t c : o.candidates) {
    if (c >= o.block_size) throw ConfigError("candidate offset outside the block");
    cands.candidates.push_back({block.begin + c, 0, 0.5F});
  }
  std::vector<Position> decoded;
  for (std::size_t d : o.decoded) {
    if (d >= o.block_size) throw ConfigError("decoded offset outside the block");
    decoded.push_back(block.begin + d);
  }
  const SpecSet spec = build_spec_set(cands, o.stage);
  if (o.stage == 2) {
    for (Position p : decoded) context.push_back({p, KeySource::shared, kMainBlock});
  }
  return build_spec_layout(block, spec, o.stage == 2 ? std::span<const Position>(decoded) : std::span<const Position>(),
                           context);
}

// Writes the 0/1 visibility grid of a synthetic layout as CSV.
inline int cmd_dump_mask(const DumpMaskOptions& o, std::ostream& err) {
  return detail::guarded(err, [&]() -> int {
    if (o.block_size == 0) {
      err << "error: --block-size must be positive\n";
      return kExitUsage;
    }
    if (o.stage < 0 || o.stage > 2) {
      err << "error: --stage must be 0, 1 or 2\n";
      return kExitUsage;
    }
    if (o.stage > 0 && o.candidates.empty()) {
      err << "error: --stage needs --candidates\n";
      return kExitUsage;
    }
    std::ostringstream ss;
    write_mask_csv(ss, mask_layout(o));
    write_text_file(o.out, ss.str());
    return kExitOk;
  });
}

}  // namespace dllm
