// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "prlab/bench.hpp"
#include "prlab/model.hpp"
#include "prlab/roofline.hpp"

namespace prlab {

// A policy axis entry: either a built-in name or a custom JSON spec
// (see policy_from_spec).
struct PolicyRef {
  std::string name;
  nlohmann::json custom;  // null for built-ins

  bool is_custom() const { return !custom.is_null(); }
  PrecisionPolicy resolve() const;
  nlohmann::json to_json() const;
};

struct NamedModel {
  std::string name;
  ModelConfig config;
};

// A full experiment: the Cartesian grid axes, the tasks evaluated per
// cell, the measurement protocol, and the hardware model for roofline
// numbers.
struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<NamedModel> models;
  std::vector<PolicyRef> policies;
  std::vector<int64_t> batch_sizes = {1};
  std::vector<int64_t> seq_lens = {32};
  std::vector<uint64_t> seeds = {0};
  std::vector<std::string> tasks = {"fidelity"};
  BenchProtocol protocol;
  HardwareSpec hardware = rtx3090_spec();
  std::string output_dir = "runs_out";
  int64_t perplexity_context = 48;
  int64_t perplexity_stream = 200;

  void validate() const;
};

// Valid task names: fidelity, bench, attention_profile, roofline,
// perplexity, margins.
const std::vector<std::string>& known_tasks();

// Loads a YAML (.yaml/.yml) or JSON (.json) experiment file.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

// One grid cell, fully resolved. The cell seed drives both parameter
// initialization (via the model config) and input token sampling.
struct RunParams {
  std::string model_name;
  ModelConfig model;
  PolicyRef policy;
  int64_t batch = 1;
  int64_t seq = 32;
  uint64_t seed = 0;
  std::vector<std::string> tasks;
  uint64_t config_hash = 0;  // content hash of the resolved cell
  std::string run_id;        // readable prefix + hash suffix
};

struct GridExpansion {
  std::vector<RunParams> cells;
  uint64_t dropped_seq_cells = 0;  // seq > max_positions
  std::vector<std::string> filter_notes;
};

// Expands the grid in axis declaration order (models, policies, batches,
// sequence lengths, seeds), dropping cells whose sequence length exceeds
// the model's max_positions. Throws when nothing survives, listing the
// filters that fired.
GridExpansion expand_grid(const ExperimentConfig& config);

struct RunRecord {
  std::string run_id;
  std::string config_hash;  // 16 hex digits
  std::string status;       // "ok" or "failed"
  bool from_cache = false;
  nlohmann::json document;  // the record as persisted
};

struct ExecuteOptions {
  bool resume = false;
  int64_t workers = 1;
  // Called after each record is persisted (in grid order when workers == 1).
  // Primarily a test seam: a throwing hook simulates an interrupted run.
  std::function<void(const RunRecord&)> on_record;
};

// Runs every cell, persisting one JSON record per run under
// <output_dir>/runs/<run_id>.json (written to a temp file and renamed, so
// records are never half-written) and a manifest under
// <output_dir>/manifest.json. With resume, cells whose record already
// parses with status "ok" are loaded instead of recomputed; corrupt or
// failed records are redone. Task failures mark the record "failed" and
// execution continues.
std::vector<RunRecord> execute(const ExperimentConfig& config, const ExecuteOptions& options);

// Sorted-by-run_id manifest of record ids, hashes and statuses. Contains
// no timestamps or timing, so identical experiments produce identical
// manifests.
nlohmann::json build_manifest(const std::vector<RunRecord>& records);
void write_manifest(const std::string& output_dir, const std::vector<RunRecord>& records);

// Reads all persisted run documents under <output_dir>/runs, sorted by
// file name.
std::vector<nlohmann::json> read_run_documents(const std::string& output_dir);

// FNV-1a 64-bit content hash used for cell identity.
uint64_t fnv1a64(std::string_view s);
std::string hash_hex(uint64_t h);

// Tabular aggregation of run records. Kinds: speedup (fp32-relative mean
// latency per model/batch/seq), fidelity (worst case across seeds per
// model/policy/batch/seq group), attention (per-layer score statistics),
// roofline (per-class intensity rows). Unknown kinds throw, listing the
// valid ones.
struct ReportTable {
  std::string note;  // emitted as a leading '#' comment line in CSV
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

ReportTable make_report(const std::string& kind, const std::vector<nlohmann::json>& records);

}  // namespace prlab
