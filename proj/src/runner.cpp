// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "prlab/checkpoint.hpp"
#include "prlab/fidelity.hpp"

#ifndef PRLAB_BUILD_ID
#define PRLAB_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;

namespace prlab {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed for the input token stream of a cell, decorrelated from the
// parameter-init seed.
uint64_t token_seed(uint64_t cell_seed) { return splitmix64(cell_seed); }

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out;
}

// YAML -> JSON with scalar type inference (yaml-cpp keeps scalars as
// strings).
nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
      return nullptr;
    case YAML::NodeType::Scalar: {
      const std::string& s = node.Scalar();
      if (s == "true" || s == "True") return true;
      if (s == "false" || s == "False") return false;
      if (s == "null" || s == "~") return nullptr;
      try {
        size_t used = 0;
        const long long i = std::stoll(s, &used);
        if (used == s.size()) return i;
      } catch (const std::exception&) {
      }
      try {
        size_t used = 0;
        const double d = std::stod(s, &used);
        if (used == s.size()) return d;
      } catch (const std::exception&) {
      }
      return s;
    }
    case YAML::NodeType::Sequence: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& item : node) arr.push_back(yaml_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      nlohmann::json obj = nlohmann::json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    default:
      return nullptr;
  }
}

void apply_model_overrides(ModelConfig& c, const nlohmann::json& j) {
  if (j.contains("archetype")) {
    c.archetype = archetype_from_name(j.at("archetype").get<std::string>());
  }
  if (j.contains("num_layers")) c.num_layers = j.at("num_layers").get<int64_t>();
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<int64_t>();
  if (j.contains("heads")) c.heads = j.at("heads").get<int64_t>();
  if (j.contains("ffn")) c.ffn = j.at("ffn").get<int64_t>();
  if (j.contains("vocab")) c.vocab = j.at("vocab").get<int64_t>();
  if (j.contains("max_positions")) c.max_positions = j.at("max_positions").get<int64_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
}

NamedModel model_entry_from_json(const nlohmann::json& j) {
  NamedModel m;
  if (j.is_string()) {
    m.name = j.get<std::string>();
    m.config = ModelConfig::preset(m.name);
    return m;
  }
  if (!j.is_object()) {
    throw std::invalid_argument("model entry must be a preset name or an object");
  }
  if (j.contains("preset")) {
    m.config = ModelConfig::preset(j.at("preset").get<std::string>());
    m.name = j.at("preset").get<std::string>();
  }
  if (j.contains("overrides")) apply_model_overrides(m.config, j.at("overrides"));
  apply_model_overrides(m.config, j);
  if (j.contains("name")) m.name = j.at("name").get<std::string>();
  if (m.name.empty()) {
    m.name = std::string(archetype_name(m.config.archetype)) + "_h" +
             std::to_string(m.config.hidden) + "_l" + std::to_string(m.config.num_layers);
  }
  m.config.validate();
  return m;
}

PolicyRef policy_entry_from_json(const nlohmann::json& j) {
  PolicyRef p;
  if (j.is_string()) {
    p.name = j.get<std::string>();
    (void)resolve_policy(p.name);  // validate eagerly
    return p;
  }
  if (!j.is_object()) {
    throw std::invalid_argument("policy entry must be a name or a custom spec object");
  }
  p.custom = j;
  p.name = policy_from_spec(j).name;  // validates the spec
  return p;
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string cpu_model_name() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos && colon + 2 <= line.size()) {
        return line.substr(colon + 2);
      }
    }
  }
  return "unknown";
}

}  // namespace

PrecisionPolicy PolicyRef::resolve() const {
  return is_custom() ? policy_from_spec(custom) : resolve_policy(name);
}

nlohmann::json PolicyRef::to_json() const {
  return is_custom() ? custom : nlohmann::json(name);
}

const std::vector<std::string>& known_tasks() {
  static const std::vector<std::string> kTasks = {
      "fidelity", "bench", "attention_profile", "roofline", "perplexity", "margins"};
  return kTasks;
}

void ExperimentConfig::validate() const {
  if (models.empty()) throw std::invalid_argument("experiment lists no models");
  if (policies.empty()) throw std::invalid_argument("experiment lists no policies");
  if (batch_sizes.empty() || seq_lens.empty() || seeds.empty()) {
    throw std::invalid_argument("experiment axes must be non-empty");
  }
  for (int64_t b : batch_sizes) {
    if (b < 1) throw std::invalid_argument("batch sizes must be >= 1");
  }
  for (int64_t s : seq_lens) {
    if (s < 1) throw std::invalid_argument("sequence lengths must be >= 1");
  }
  if (tasks.empty()) throw std::invalid_argument("experiment lists no tasks");
  const auto& known = known_tasks();
  for (const std::string& t : tasks) {
    if (std::find(known.begin(), known.end(), t) == known.end()) {
      std::string valid;
      for (const auto& k : known) valid += (valid.empty() ? "" : ", ") + k;
      throw std::invalid_argument("unknown task '" + t + "' (valid: " + valid + ")");
    }
  }
  protocol.validate();
  hardware.validate();
  if (output_dir.empty()) throw std::invalid_argument("output_dir must be non-empty");
  if (perplexity_context < 2) throw std::invalid_argument("perplexity context must be >= 2");
  if (perplexity_stream <= perplexity_context) {
    throw std::invalid_argument("perplexity stream must exceed the context length");
  }
}

namespace {

// Unknown keys are configuration bugs (a typo'd axis silently falls back to its
// default otherwise), so reject them outright.
void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      std::string valid;
      for (const auto& k : allowed) valid += (valid.empty() ? "" : ", ") + k;
      throw std::invalid_argument("unknown key '" + key + "' in " + where +
                                  " (valid: " + valid + ")");
    }
  }
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("experiment config must be an object");
  reject_unknown_keys(j,
                      {"name", "models", "policies", "batch_sizes", "seq_lens", "seeds",
                       "tasks", "protocol", "hardware", "hardware_spec", "output_dir",
                       "perplexity"},
                      "experiment config");
  ExperimentConfig cfg;
  if (j.contains("name")) cfg.name = j.at("name").get<std::string>();
  if (!j.contains("models")) throw std::invalid_argument("experiment config lacks 'models'");
  for (const auto& entry : j.at("models")) cfg.models.push_back(model_entry_from_json(entry));
  if (!j.contains("policies")) {
    throw std::invalid_argument("experiment config lacks 'policies'");
  }
  for (const auto& entry : j.at("policies")) {
    cfg.policies.push_back(policy_entry_from_json(entry));
  }
  if (j.contains("batch_sizes")) cfg.batch_sizes = j.at("batch_sizes").get<std::vector<int64_t>>();
  if (j.contains("seq_lens")) cfg.seq_lens = j.at("seq_lens").get<std::vector<int64_t>>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.contains("tasks")) cfg.tasks = j.at("tasks").get<std::vector<std::string>>();
  if (j.contains("protocol")) {
    const auto& p = j.at("protocol");
    reject_unknown_keys(p, {"warmup_iters", "measure_iters"}, "protocol");
    if (p.contains("warmup_iters")) cfg.protocol.warmup_iters = p.at("warmup_iters").get<int64_t>();
    if (p.contains("measure_iters")) {
      cfg.protocol.measure_iters = p.at("measure_iters").get<int64_t>();
    }
  }
  if (j.contains("hardware") || j.contains("hardware_spec")) {
    const auto& h = j.contains("hardware_spec") ? j.at("hardware_spec") : j.at("hardware");
    if (h.is_string()) {
      const std::string name = h.get<std::string>();
      if (name != "rtx3090") {
        throw std::invalid_argument("unknown hardware preset '" + name + "' (valid: rtx3090)");
      }
      cfg.hardware = rtx3090_spec();
    } else {
      cfg.hardware = hardware_from_json(h);
    }
  }
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("perplexity")) {
    const auto& p = j.at("perplexity");
    reject_unknown_keys(p, {"context_len", "stream_len"}, "perplexity");
    if (p.contains("context_len")) cfg.perplexity_context = p.at("context_len").get<int64_t>();
    if (p.contains("stream_len")) cfg.perplexity_stream = p.at("stream_len").get<int64_t>();
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open experiment config: " + path);
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  const fs::path p(path);
  nlohmann::json j;
  if (p.extension() == ".json") {
    j = nlohmann::json::parse(text);
  } else if (p.extension() == ".yaml" || p.extension() == ".yml") {
    j = yaml_to_json(YAML::Load(text));
  } else {
    throw std::runtime_error("experiment config must be .yaml, .yml or .json: " + path);
  }
  return experiment_from_json(j);
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  static const char* kHex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

GridExpansion expand_grid(const ExperimentConfig& config) {
  config.validate();
  GridExpansion grid;
  std::set<std::string> noted;
  for (const NamedModel& nm : config.models) {
    for (const PolicyRef& policy : config.policies) {
      for (int64_t batch : config.batch_sizes) {
        for (int64_t seq : config.seq_lens) {
          for (uint64_t seed : config.seeds) {
            if (seq > nm.config.max_positions) {
              ++grid.dropped_seq_cells;
              const std::string note =
                  "model '" + nm.name + "': dropped seq " + std::to_string(seq) +
                  " > max_positions " + std::to_string(nm.config.max_positions);
              if (noted.insert(note).second) grid.filter_notes.push_back(note);
              continue;
            }
            RunParams cell;
            cell.model_name = nm.name;
            cell.model = nm.config;
            cell.model.seed = seed;  // the cell seed drives initialization
            cell.policy = policy;
            cell.batch = batch;
            cell.seq = seq;
            cell.seed = seed;
            cell.tasks = config.tasks;

            nlohmann::json ident = {
                {"model", config_to_json(cell.model)},
                {"policy", cell.policy.to_json()},
                {"batch", batch},
                {"seq", seq},
                {"seed", seed},
                {"tasks", cell.tasks},
            };
            cell.config_hash = fnv1a64(ident.dump());
            cell.run_id = sanitize(nm.name) + "-" + sanitize(policy.name) + "-b" +
                          std::to_string(batch) + "-s" + std::to_string(seq) + "-seed" +
                          std::to_string(seed) + "-" + hash_hex(cell.config_hash).substr(0, 8);
            grid.cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  if (grid.cells.empty()) {
    std::string why = "grid expansion produced no cells";
    if (grid.dropped_seq_cells > 0) {
      why += " (" + std::to_string(grid.dropped_seq_cells) + " dropped:";
      for (const auto& n : grid.filter_notes) why += " " + n + ";";
      why += ")";
    }
    throw std::invalid_argument(why);
  }
  return grid;
}

namespace {

nlohmann::json run_tasks(const RunParams& cell, const ExperimentConfig& config) {
  const Model model = build_model(cell.model);
  const TokenBatch tokens =
      random_tokens(cell.model.vocab, cell.batch, cell.seq, token_seed(cell.seed));
  const PrecisionPolicy policy = cell.policy.resolve();
  const PrecisionPolicy baseline = resolve_policy("fp32");

  nlohmann::json tasks = nlohmann::json::object();
  for (const std::string& task : cell.tasks) {
    if (task == "fidelity") {
      const ForwardTrace base = forward(model, tokens, baseline);
      const ForwardTrace cand = forward(model, tokens, policy);
      const LogitComparison cmp = compare_logits(base.logits, cand.logits);
      tasks["fidelity"] = {
          {"max_abs_error", cmp.max_abs_error},
          {"mean_abs_error", cmp.mean_abs_error},
          {"cosine", cmp.cosine ? nlohmann::json(*cmp.cosine) : nlohmann::json(nullptr)},
          {"finite_pairs", cmp.finite_pairs},
          {"candidate_nonfinite", cmp.candidate_nonfinite},
          {"nan_affected", cmp.nan_affected},
      };
    } else if (task == "bench") {
      const BenchStats st = benchmark_forward(model, tokens, policy, config.protocol);
      tasks["bench"] = {
          {"mean_ms", st.mean_s * 1e3},   {"std_ms", st.std_s * 1e3},
          {"p50_ms", st.p50_s * 1e3},     {"p95_ms", st.p95_s * 1e3},
          {"p99_ms", st.p99_s * 1e3},     {"throughput_sps", st.throughput_sps},
          {"measure_iters", config.protocol.measure_iters},
      };
    } else if (task == "attention_profile") {
      const ForwardTrace trace = forward(model, tokens, policy, true);
      const AttentionStats stats = attention_profile(trace);
      nlohmann::json layers = nlohmann::json::array();
      for (const LayerAttentionStats& ls : stats.layers) {
        layers.push_back({
            {"kurtosis", ls.score_kurtosis},
            {"max_abs_score", ls.max_abs_score},
            {"interhead_r", ls.mean_interhead_r ? nlohmann::json(*ls.mean_interhead_r)
                                                : nlohmann::json(nullptr)},
        });
      }
      tasks["attention_profile"] = {
          {"layers", layers},
          {"kurtosis_mean", stats.kurtosis_mean},
          {"kurtosis_std", stats.kurtosis_std},
      };
    } else if (task == "roofline") {
      tasks["roofline"] = {
          {"f32", roofline_json(
                      roofline_report(config.hardware, cell.model, cell.batch, cell.seq,
                                      Dtype::F32))},
          {"f16e", roofline_json(
                       roofline_report(config.hardware, cell.model, cell.batch, cell.seq,
                                       Dtype::F16E))},
      };
    } else if (task == "perplexity") {
      if (cell.model.archetype != Archetype::DecoderOnly) {
        tasks["perplexity"] = {{"skipped", "perplexity needs a decoder_only model"}};
        continue;
      }
      const TokenBatch stream = random_tokens(cell.model.vocab, 1, config.perplexity_stream,
                                              token_seed(cell.seed ^ 0x70705ULL));
      const int64_t ctx = std::min(config.perplexity_context, cell.model.max_positions);
      const double ppl = perplexity(model, stream.ids, ctx, policy);
      const double ppl_base = perplexity(model, stream.ids, ctx, baseline);
      tasks["perplexity"] = {
          {"context_len", ctx},
          {"stream_len", config.perplexity_stream},
          {"ppl", ppl},
          {"ppl_fp32", ppl_base},
          {"rel_diff", (ppl - ppl_base) / ppl_base},
      };
    } else if (task == "margins") {
      if (cell.model.archetype != Archetype::EncoderOnly) {
        tasks["margins"] = {{"skipped", "margins need an encoder_only model"}};
        continue;
      }
      const std::vector<float> base = classifier_probs(model, tokens, baseline);
      const std::vector<float> cand = classifier_probs(model, tokens, policy);
      const MarginReport mr = margin_analysis(base, cand);
      tasks["margins"] = {
          {"min_margin_baseline", mr.min_margin_baseline},
          {"min_margin_candidate", mr.min_margin_candidate},
          {"flip_count", mr.flip_count},
          {"flipped_indices", mr.flipped_indices},
      };
    }
  }
  return tasks;
}

nlohmann::json make_record_document(const RunParams& cell, const std::string& status,
                                    const nlohmann::json& tasks, const std::string& error) {
  nlohmann::json doc = {
      {"run_id", cell.run_id},
      {"config_hash", hash_hex(cell.config_hash)},
      {"status", status},
      {"model_name", cell.model_name},
      {"model", config_to_json(cell.model)},
      {"policy", cell.policy.to_json()},
      {"batch", cell.batch},
      {"seq", cell.seq},
      {"seed", cell.seed},
      {"tasks", tasks},
      {"meta",
       {
           {"build_id", PRLAB_BUILD_ID},
           {"timestamp", now_iso8601()},
           {"os", "linux"},
           {"cpu", cpu_model_name()},
           // No GPU in the loop: these stay explicit nulls rather than
           // silently absent fields.
           {"cuda_version", nullptr},
           {"driver_version", nullptr},
           {"gpu_temperature", nullptr},
           {"power_draw", nullptr},
       }},
  };
  if (!error.empty()) doc["error"] = error;
  return doc;
}

void atomic_write(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failure on " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Loads a resumable record: must parse, carry the expected hash, and have
// completed successfully. Anything else is recomputed.
bool try_load_cached(const fs::path& path, const RunParams& cell, RunRecord& out) {
  std::ifstream in(path);
  if (!in) return false;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return false;  // corrupt record: recompute
  }
  if (doc.value("status", "") != "ok") return false;
  if (doc.value("config_hash", "") != hash_hex(cell.config_hash)) return false;
  out.run_id = cell.run_id;
  out.config_hash = hash_hex(cell.config_hash);
  out.status = "ok";
  out.from_cache = true;
  out.document = std::move(doc);
  return true;
}

RunRecord execute_cell(const RunParams& cell, const ExperimentConfig& config,
                       const ExecuteOptions& options, const fs::path& runs_dir) {
  const fs::path path = runs_dir / (cell.run_id + ".json");
  RunRecord rec;
  if (options.resume && try_load_cached(path, cell, rec)) return rec;

  std::string status = "ok";
  std::string error;
  nlohmann::json tasks = nlohmann::json::object();
  try {
    tasks = run_tasks(cell, config);
  } catch (const std::exception& e) {
    status = "failed";
    error = e.what();
  }
  rec.run_id = cell.run_id;
  rec.config_hash = hash_hex(cell.config_hash);
  rec.status = status;
  rec.from_cache = false;
  rec.document = make_record_document(cell, status, tasks, error);
  atomic_write(path, rec.document.dump(2) + "\n");
  return rec;
}

}  // namespace

std::vector<RunRecord> execute(const ExperimentConfig& config, const ExecuteOptions& options) {
  if (options.workers < 1) throw std::invalid_argument("workers must be >= 1");
  const GridExpansion grid = expand_grid(config);
  const fs::path runs_dir = fs::path(config.output_dir) / "runs";
  fs::create_directories(runs_dir);

  std::vector<RunRecord> records(grid.cells.size());
  if (options.workers == 1) {
    for (size_t i = 0; i < grid.cells.size(); ++i) {
      records[i] = execute_cell(grid.cells[i], config, options, runs_dir);
      if (options.on_record) options.on_record(records[i]);
    }
  } else {
    std::atomic<size_t> next{0};
    std::mutex hook_mutex;
    std::exception_ptr hook_error;
    std::atomic<bool> stop{false};
    auto worker = [&] {
      while (!stop.load()) {
        const size_t i = next.fetch_add(1);
        if (i >= grid.cells.size()) return;
        records[i] = execute_cell(grid.cells[i], config, options, runs_dir);
        if (options.on_record) {
          std::lock_guard<std::mutex> lock(hook_mutex);
          try {
            options.on_record(records[i]);
          } catch (...) {
            if (!hook_error) hook_error = std::current_exception();
            stop.store(true);
          }
        }
      }
    };
    std::vector<std::thread> pool;
    const size_t n = std::min<size_t>(static_cast<size_t>(options.workers), grid.cells.size());
    pool.reserve(n);
    for (size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (hook_error) std::rethrow_exception(hook_error);
  }

  write_manifest(config.output_dir, records);
  return records;
}

nlohmann::json build_manifest(const std::vector<RunRecord>& records) {
  std::vector<const RunRecord*> sorted;
  sorted.reserve(records.size());
  for (const RunRecord& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const RunRecord* a, const RunRecord* b) { return a->run_id < b->run_id; });
  nlohmann::json runs = nlohmann::json::array();
  for (const RunRecord* r : sorted) {
    runs.push_back({
        {"run_id", r->run_id},
        {"config_hash", r->config_hash},
        {"status", r->status},
    });
  }
  return {{"version", 1}, {"runs", runs}};
}

void write_manifest(const std::string& output_dir, const std::vector<RunRecord>& records) {
  atomic_write(fs::path(output_dir) / "manifest.json", build_manifest(records).dump(2) + "\n");
}

std::vector<nlohmann::json> read_run_documents(const std::string& output_dir) {
  const fs::path runs_dir = fs::path(output_dir) / "runs";
  if (!fs::is_directory(runs_dir)) {
    throw std::runtime_error("no run records under " + runs_dir.string());
  }
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    if (entry.path().extension() == ".json") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<nlohmann::json> docs;
  docs.reserve(paths.size());
  for (const fs::path& p : paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read run record " + p.string());
    docs.push_back(nlohmann::json::parse(in));
  }
  return docs;
}

}  // namespace prlab
