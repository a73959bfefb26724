#pragma once

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dllm/decoder.hpp"
#include "dllm/metrics.hpp"
#include "dllm/scripted_model.hpp"
#include "dllm/trajectory.hpp"

namespace dllm {

using json = nlohmann::json;

struct TaskRecord {
  std::string id;
  std::vector<TokenId> prompt_tokens;
  std::string note;
};

namespace detail {

inline void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected an object");
}

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ParseError(path + "." + key + ": unknown field");
  }
}

inline const json& field(const json& j, const std::string& key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + "." + key + ": missing field");
  return *it;
}

template <typename T>
T as(const json& v, const std::string& path) {
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ParseError(path + ": expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ParseError(path + ": expected a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ParseError(path + ": expected an integer");
    if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
      throw ParseError(path + ": expected a non-negative integer");
    return v.get<T>();
  } else {
    if (!v.is_number()) throw ParseError(path + ": expected a number");
    return v.get<T>();
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& path) {
  return as<T>(field(j, key, path), path + "." + key);
}

// Shortest decimal that reads back as `f`, widened to double, so JSON shows
// 0.97 rather than 0.9700000286102295.
inline double short_float(float f) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), f);
  return std::strtod(std::string(buf, res.ptr).c_str(), nullptr);
}

// 1-based line of a byte offset.
inline std::size_t line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) line += text[i] == '\n' ? 1 : 0;
  return line;
}

}  // namespace detail

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ":" + std::to_string(detail::line_of(text, e.byte)) + ": malformed JSON");
  }
}

inline json read_json_file(const std::string& path) { return parse_json_text(read_text_file(path), path); }

// --- model config ---------------------------------------------------------

inline ModelConfig parse_model_config(const json& j, const std::string& path = "model") {
  detail::require_object(j, path);
  detail::reject_unknown(j, {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "mask_token_id", "eos_token_id", "seed"}, path);
  ModelConfig c;
  c.vocab_size = detail::get<std::size_t>(j, "vocab_size", path);
  c.d_model = detail::get<std::size_t>(j, "d_model", path);
  c.n_layers = detail::get<std::size_t>(j, "n_layers", path);
  c.n_heads = detail::get<std::size_t>(j, "n_heads", path);
  c.d_ff = detail::get<std::size_t>(j, "d_ff", path);
  c.mask_token_id = detail::get<TokenId>(j, "mask_token_id", path);
  c.eos_token_id = detail::get<TokenId>(j, "eos_token_id", path);
  c.seed = detail::get<std::uint64_t>(j, "seed", path);
  return c;
}

inline json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},           {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},                 {"mask_token_id", c.mask_token_id},
          {"eos_token_id", c.eos_token_id}, {"seed", c.seed}};
}

// --- run config -------------------------------------------------------------

inline Strategy parse_strategy(const std::string& s, const std::string& path = "strategy") {
  if (s == "vanilla") return Strategy::vanilla;
  if (s == "fast") return Strategy::fast;
  if (s == "odb") return Strategy::odb;
  throw ParseError(path + ": unknown strategy '" + s + "' (vanilla|fast|odb)");
}

// Every key is optional; absent keys keep the defaults in `base`.
inline RunConfig parse_run_config(const json& j, RunConfig base = {}, const std::string& path = "run") {
  detail::require_object(j, path);
  detail::reject_unknown(j, {"strategy", "gen_length", "block_size", "accept_threshold", "truncate_threshold",
                             "stage2_min_decoded", "seed", "tau_steps", "speculation"},
                         path);
  if (j.contains("strategy")) base.strategy = parse_strategy(detail::get<std::string>(j, "strategy", path), path + ".strategy");
  if (j.contains("gen_length")) base.gen_length = detail::get<std::size_t>(j, "gen_length", path);
  if (j.contains("block_size")) base.block_size = detail::get<std::size_t>(j, "block_size", path);
  if (j.contains("accept_threshold")) base.accept_threshold = detail::get<float>(j, "accept_threshold", path);
  if (j.contains("truncate_threshold")) base.truncate_threshold = detail::get<float>(j, "truncate_threshold", path);
  if (j.contains("stage2_min_decoded")) base.stage2_min_decoded = detail::get<std::size_t>(j, "stage2_min_decoded", path);
  if (j.contains("seed")) base.seed = detail::get<std::uint64_t>(j, "seed", path);
  if (j.contains("tau_steps")) base.tau_steps = detail::get<std::size_t>(j, "tau_steps", path);
  if (j.contains("speculation")) base.speculation = detail::get<bool>(j, "speculation", path);
  return base;
}

inline json to_json(const RunConfig& c) {
  return {{"strategy", to_string(c.strategy)},
          {"gen_length", c.gen_length},
          {"block_size", c.block_size},
          {"accept_threshold", detail::short_float(c.accept_threshold)},
          {"truncate_threshold", detail::short_float(c.truncate_threshold)},
          {"stage2_min_decoded", c.stage2_threshold()},
          {"seed", c.seed},
          {"tau_steps", c.tau_steps},
          {"speculation", c.speculation}};
}

// --- hardware profile -------------------------------------------------------

inline HardwareProfile parse_profile(const json& j, const std::string& path = "profile") {
  detail::require_object(j, path);
  detail::reject_unknown(j, {"name", "peak_flops", "mem_bandwidth"}, path);
  HardwareProfile p;
  p.name = detail::get<std::string>(j, "name", path);
  p.peak_flops = detail::get<double>(j, "peak_flops", path);
  p.mem_bandwidth = detail::get<double>(j, "mem_bandwidth", path);
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ParseError(path + ": " + e.what());
  }
  return p;
}

inline json to_json(const HardwareProfile& p) {
  return {{"name", p.name}, {"peak_flops", p.peak_flops}, {"mem_bandwidth", p.mem_bandwidth}, {"balance", p.balance()}};
}

// --- scripted schedule --------------------------------------------------------
//
// {
//   "0": {
//     "predictions":  [{"position": 20, "token": 17, "confidence": 0.95}],
//     "eos":          [{"position": 107, "confidence": 0.99}],
//     "conditionals": [{"unmasked": [20], "position": 21, "token": 5, "confidence": 0.95}]
//   },
//   "1": { ... }
// }
//
// Step keys must be 0..n-1. EOS entries are predictions of `eos_token`.

inline ScriptedSchedule parse_schedule(const json& j, TokenId eos_token, const std::string& path = "schedule") {
  detail::require_object(j, path);
  ScriptedSchedule sched;
  sched.steps.resize(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [key, entry_json] : j.items()) {
    std::size_t idx = 0;
    try {
      std::size_t used = 0;
      idx = std::stoul(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw ParseError(path + "." + key + ": step keys must be integers");
    }
    if (idx >= j.size() || seen[idx]) throw ParseError(path + "." + key + ": step keys must be 0..n-1 without gaps");
    seen[idx] = true;
    const std::string epath = path + "." + key;
    detail::require_object(entry_json, epath);
    detail::reject_unknown(entry_json, {"predictions", "eos", "conditionals"}, epath);
    ScheduleEntry& entry = sched.steps[idx];

    auto add = [&](Position pos, ScriptedPrediction p, const std::string& ipath) {
      if (!(p.confidence >= 0.0F && p.confidence <= 1.0F)) throw ParseError(ipath + ".confidence: outside [0,1]");
      if (!entry.predictions.emplace(pos, p).second) throw ParseError(ipath + ".position: duplicate position");
    };
    if (entry_json.contains("predictions")) {
      const auto& arr = entry_json["predictions"];
      if (!arr.is_array()) throw ParseError(epath + ".predictions: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ipath = epath + ".predictions[" + std::to_string(i) + "]";
        detail::require_object(arr[i], ipath);
        add(detail::get<std::size_t>(arr[i], "position", ipath),
            {detail::get<TokenId>(arr[i], "token", ipath), detail::get<float>(arr[i], "confidence", ipath)}, ipath);
      }
    }
    if (entry_json.contains("eos")) {
      const auto& arr = entry_json["eos"];
      if (!arr.is_array()) throw ParseError(epath + ".eos: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ipath = epath + ".eos[" + std::to_string(i) + "]";
        detail::require_object(arr[i], ipath);
        add(detail::get<std::size_t>(arr[i], "position", ipath), {eos_token, detail::get<float>(arr[i], "confidence", ipath)},
            ipath);
      }
    }
    if (entry_json.contains("conditionals")) {
      const auto& arr = entry_json["conditionals"];
      if (!arr.is_array()) throw ParseError(epath + ".conditionals: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ipath = epath + ".conditionals[" + std::to_string(i) + "]";
        detail::require_object(arr[i], ipath);
        ConditionalPrediction c;
        const auto& un = detail::field(arr[i], "unmasked", ipath);
        if (!un.is_array()) throw ParseError(ipath + ".unmasked: expected an array");
        for (std::size_t u = 0; u < un.size(); ++u)
          c.unmasked.push_back(detail::as<std::size_t>(un[u], ipath + ".unmasked[" + std::to_string(u) + "]"));
        c.position = detail::get<std::size_t>(arr[i], "position", ipath);
        c.prediction = {detail::get<TokenId>(arr[i], "token", ipath), detail::get<float>(arr[i], "confidence", ipath)};
        if (!(c.prediction.confidence >= 0.0F && c.prediction.confidence <= 1.0F))
          throw ParseError(ipath + ".confidence: outside [0,1]");
        entry.conditionals.push_back(std::move(c));
      }
    }
  }
  if (sched.steps.empty()) throw ParseError(path + ": schedule has no steps");
  return sched;
}

inline json to_json(const ScriptedSchedule& s) {
  json out = json::object();
  for (std::size_t i = 0; i < s.steps.size(); ++i) {
    json preds = json::array();
    for (const auto& [pos, p] : s.steps[i].predictions)
      preds.push_back({{"position", pos}, {"token", p.token}, {"confidence", detail::short_float(p.confidence)}});
    json conds = json::array();
    for (const auto& c : s.steps[i].conditionals)
      conds.push_back({{"unmasked", c.unmasked},
                       {"position", c.position},
                       {"token", c.prediction.token},
                       {"confidence", detail::short_float(c.prediction.confidence)}});
    json entry = {{"predictions", preds}};
    if (!conds.empty()) entry["conditionals"] = conds;
    out[std::to_string(i)] = entry;
  }
  return out;
}

// --- tasks (JSONL) ------------------------------------------------------------

inline std::vector<TaskRecord> parse_tasks(std::istream& in, const std::string& source) {
  std::vector<TaskRecord> tasks;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw ParseError(where + ": malformed JSON");
    }
    const std::string path = where + ": task";
    detail::require_object(j, path);
    detail::reject_unknown(j, {"id", "prompt_tokens", "note"}, path);
    TaskRecord t;
    t.id = detail::get<std::string>(j, "id", path);
    if (t.id.empty() || t.id.find_first_of("/\\") != std::string::npos)
      throw ParseError(path + ".id: must be a non-empty name without path separators");
    const auto& toks = detail::field(j, "prompt_tokens", path);
    if (!toks.is_array() || toks.empty()) throw ParseError(path + ".prompt_tokens: expected a non-empty array");
    for (std::size_t i = 0; i < toks.size(); ++i)
      t.prompt_tokens.push_back(detail::as<TokenId>(toks[i], path + ".prompt_tokens[" + std::to_string(i) + "]"));
    if (j.contains("note")) t.note = detail::get<std::string>(j, "note", path);
    if (!ids.insert(t.id).second) throw ParseError(path + ".id: duplicate id '" + t.id + "'");
    tasks.push_back(std::move(t));
  }
  if (tasks.empty()) throw ParseError(source + ": no tasks");
  return tasks;
}

inline json to_json(const TaskRecord& t) {
  json j = {{"id", t.id}, {"prompt_tokens", t.prompt_tokens}};
  if (!t.note.empty()) j["note"] = t.note;
  return j;
}

// --- trajectory / metrics -----------------------------------------------------

inline json to_json(const Decision& d) { return json::array({d.position, d.token, detail::short_float(d.confidence)}); }

inline json to_json(const TruncationEvent& e) {
  return {{"refresh_epoch", e.refresh_epoch},   {"eos_position", e.eos_position},
          {"eos_confidence", detail::short_float(e.eos_confidence)}, {"old_gen_length", e.old_gen_length},
          {"new_gen_length", e.new_gen_length}};
}

inline json to_json(const StepRecord& s) {
  json accepted = json::array();
  for (const auto& d : s.accepted) accepted.push_back(to_json(d));
  json j = {{"step", s.index},
            {"phase", to_string(s.phase)},
            {"block", s.block},
            {"seq_len", s.seq_len},
            {"T", s.query_tokens},
            {"C", s.context_tokens},
            {"stage", s.stage},
            {"blocks_evaluated", s.blocks_evaluated},
            {"accepted", accepted}};
  if (s.stage > 0) {
    json cands = json::array();
    for (const auto& d : s.candidates) cands.push_back(to_json(d));
    j["candidates"] = cands;
    j["adopted_tag"] = s.adopted_tag;
    j["jump_count"] = s.jump_count;
  }
  return j;
}

inline json to_json(const Trajectory& t) {
  json steps = json::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  json truncs = json::array();
  for (const auto& e : t.truncations) truncs.push_back(to_json(e));
  return {{"strategy", to_string(t.strategy)},
          {"model", to_json(t.model)},
          {"prompt_len", t.prompt_len},
          {"block_size", t.block_size},
          {"initial_gen_length", t.initial_gen_length},
          {"final_gen_length", t.final_gen_length},
          {"response", t.response()},
          {"steps", steps},
          {"truncations", truncs}};
}

inline json to_json(const PhaseSummary& p) {
  return {{"steps", p.steps},
          {"mean_ai", p.mean_ai},
          {"time_s", p.time_s},
          {"compute_bound", p.compute_bound},
          {"memory_bound", p.memory_bound}};
}

inline json to_json(const MetricsReport& m) {
  json truncs = json::array();
  for (const auto& e : m.truncations) truncs.push_back(to_json(e));
  return {{"nfe", m.nfe},
          {"eff_nfe", m.eff_nfe},
          {"prefill_steps", m.prefill_steps},
          {"decode_steps", m.decode_steps},
          {"blocks_evaluated", m.blocks_evaluated},
          {"jumps", m.jumps},
          {"tokens_generated", m.tokens_generated},
          {"prefill_time_frac", m.prefill_time_frac},
          {"total_est_time_s", m.total_est_time_s},
          {"total_flops", m.total_flops},
          {"total_bytes", m.total_bytes},
          {"prefill", to_json(m.prefill)},
          {"decode", to_json(m.decode)},
          {"truncations", truncs}};
}

inline const char* kCostModelDescription =
    "flops = n_layers*(8*T*d^2 + 4*T*C*d + 4*T*d*d_ff) + 2*T*d*vocab; "
    "bytes = 4*(param_count + 2*n_layers*C*d + 2*n_layers*T*d); "
    "ai = flops/bytes; est_time_s = max(flops/peak_flops, bytes/mem_bandwidth); "
    "bound = compute iff ai >= peak_flops/mem_bandwidth";

// 17 significant digits: round-trips every double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_cost_csv(std::ostream& out, const std::vector<CostRecord>& records) {
  out << "step,phase,T,C,flops,bytes,ai,bound,est_time_s\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << i << ',' << to_string(r.phase) << ',' << r.query_tokens << ',' << r.context_tokens << ','
        << format_double(r.flops) << ',' << format_double(r.bytes) << ',' << format_double(r.arithmetic_intensity) << ','
        << to_string(r.bound) << ',' << format_double(r.est_time_s) << '\n';
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace dllm
