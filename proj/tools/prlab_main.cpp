// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
//
// prlab: precision-policy experiments on an emulated-fp16 transformer.
//
//   prlab grid run <config>       run every cell of an experiment grid
//   prlab grid expand <config>    list the cells a config expands to
//   prlab bench                   time one forward configuration
//   prlab fidelity                compare a policy's logits to fp32
//   prlab profile-attention      score-distribution statistics per layer
//   prlab roofline                attainable-throughput table per op class
//   prlab perplexity              sliding-window perplexity of a decoder
//   prlab report <kind>           aggregate persisted run records

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "prlab/checkpoint.hpp"
#include "prlab/fidelity.hpp"
#include "prlab/runner.hpp"

namespace fs = std::filesystem;
using namespace prlab;

namespace {

// --model accepts a preset name or a path to a JSON/YAML model config.
ModelConfig load_model_arg(const std::string& value, uint64_t seed) {
  ModelConfig cfg;
  if (fs::exists(value)) {
    std::ifstream in(value);
    if (!in) throw std::runtime_error("cannot open model config: " + value);
    cfg = config_from_json(nlohmann::json::parse(in));
  } else {
    cfg = ModelConfig::preset(value);
  }
  cfg.seed = seed;
  return cfg;
}

HardwareSpec load_hardware_arg(const std::string& value) {
  if (value == "rtx3090") return rtx3090_spec();
  if (fs::exists(value)) {
    std::ifstream in(value);
    if (!in) throw std::runtime_error("cannot open hardware spec: " + value);
    return hardware_from_json(nlohmann::json::parse(in));
  }
  throw std::runtime_error("unknown hardware '" + value +
                           "' (use rtx3090 or a JSON spec file)");
}

TokenBatch tokens_for(const ModelConfig& cfg, const std::string& token_file, int64_t batch,
                      int64_t seq, uint64_t seed) {
  if (!token_file.empty()) {
    return token_batch_from_lines(read_token_lines(token_file));
  }
  return random_tokens(cfg.vocab, batch, seq, seed);
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"precision-policy experiments on an emulated-fp16 transformer"};
  app.require_subcommand(1);

  // ---- grid ----
  auto* grid = app.add_subcommand("grid", "experiment grid operations");
  grid->require_subcommand(1);

  std::string grid_config;
  std::string grid_output_dir;
  bool grid_resume = false;
  int64_t grid_workers = 1;
  auto* grid_run = grid->add_subcommand("run", "run every cell of an experiment grid");
  grid_run->add_option("config", grid_config, "experiment YAML/JSON")->required();
  grid_run->add_option("--output-dir", grid_output_dir, "override the config's output_dir");
  grid_run->add_flag("--resume", grid_resume, "skip cells with valid on-disk records");
  grid_run->add_option("--workers", grid_workers, "parallel cell workers")
      ->check(CLI::PositiveNumber);

  std::string expand_config;
  auto* grid_expand = grid->add_subcommand("expand", "list the cells a config expands to");
  grid_expand->add_option("config", expand_config, "experiment YAML/JSON")->required();

  // ---- bench ----
  std::string bench_model = "decoder_toy", bench_policy = "hybrid";
  int64_t bench_batch = 1, bench_seq = 32, bench_warmup = 10, bench_iters = 100;
  uint64_t bench_seed = 0;
  bool bench_csv = false;
  auto* bench_cmd = app.add_subcommand("bench", "time one forward configuration");
  bench_cmd->add_option("--model", bench_model, "model preset or config file");
  bench_cmd->add_option("--policy", bench_policy, "fp32 | full_fp16 | hybrid");
  bench_cmd->add_option("--batch", bench_batch)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seq", bench_seq)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--warmup", bench_warmup, "warmup iterations");
  bench_cmd->add_option("--iters", bench_iters, "measured iterations");
  bench_cmd->add_option("--seed", bench_seed);
  bench_cmd->add_flag("--csv", bench_csv, "emit the benchmark CSV schema");

  // ---- fidelity ----
  std::string fid_model = "decoder_toy", fid_policy = "hybrid", fid_tokens;
  int64_t fid_batch = 1, fid_seq = 32;
  uint64_t fid_seed = 0;
  bool fid_adversarial = false;
  auto* fid_cmd = app.add_subcommand("fidelity", "compare a policy's logits to fp32");
  fid_cmd->add_option("--model", fid_model, "model preset or config file");
  fid_cmd->add_option("--policy", fid_policy, "fp32 | full_fp16 | hybrid");
  fid_cmd->add_option("--batch", fid_batch)->check(CLI::PositiveNumber);
  fid_cmd->add_option("--seq", fid_seq)->check(CLI::PositiveNumber);
  fid_cmd->add_option("--seed", fid_seed);
  fid_cmd->add_option("--tokens", fid_tokens, "newline-delimited token id file");
  fid_cmd->add_flag("--adversarial", fid_adversarial,
                    "rescale layer-0 queries/keys past the overflow threshold");

  // ---- profile-attention ----
  std::string att_model = "decoder_toy", att_policy = "fp32", att_tokens;
  int64_t att_batch = 1, att_seq = 32;
  uint64_t att_seed = 0;
  auto* att_cmd =
      app.add_subcommand("profile-attention", "score-distribution statistics per layer");
  att_cmd->add_option("--model", att_model, "model preset or config file");
  att_cmd->add_option("--policy", att_policy, "policy the forward runs under");
  att_cmd->add_option("--batch", att_batch)->check(CLI::PositiveNumber);
  att_cmd->add_option("--seq", att_seq)->check(CLI::PositiveNumber);
  att_cmd->add_option("--seed", att_seed);
  att_cmd->add_option("--tokens", att_tokens, "newline-delimited token id file");

  // ---- roofline ----
  std::string roof_model = "bert_base", roof_hw = "rtx3090", roof_dtype = "both";
  int64_t roof_batch = 1, roof_seq = 128;
  auto* roof_cmd = app.add_subcommand("roofline", "attainable-throughput table per op class");
  roof_cmd->add_option("--model", roof_model, "model preset or config file");
  roof_cmd->add_option("--batch", roof_batch)->check(CLI::PositiveNumber);
  roof_cmd->add_option("--seq", roof_seq)->check(CLI::PositiveNumber);
  roof_cmd->add_option("--hardware", roof_hw, "rtx3090 or a JSON spec file");
  roof_cmd->add_option("--dtype", roof_dtype, "f32 | f16e | both")
      ->check(CLI::IsMember({"f32", "f16e", "both"}));

  // ---- perplexity ----
  std::string ppl_model = "decoder_toy", ppl_policy = "hybrid", ppl_tokens;
  int64_t ppl_context = 48, ppl_synthetic = 0;
  uint64_t ppl_seed = 0;
  auto* ppl_cmd = app.add_subcommand("perplexity", "sliding-window perplexity of a decoder");
  ppl_cmd->add_option("--model", ppl_model, "model preset or config file");
  ppl_cmd->add_option("--policy", ppl_policy, "policy the forward runs under");
  ppl_cmd->add_option("--context", ppl_context, "window length")->check(CLI::PositiveNumber);
  ppl_cmd->add_option("--tokens", ppl_tokens, "token id file (lines are concatenated)");
  ppl_cmd->add_option("--synthetic", ppl_synthetic, "length of a seeded synthetic stream");
  ppl_cmd->add_option("--seed", ppl_seed);

  // ---- report ----
  std::string rep_kind, rep_runs_dir, rep_format = "csv", rep_out;
  auto* rep_cmd = app.add_subcommand("report", "aggregate persisted run records");
  rep_cmd->add_option("kind", rep_kind, "speedup | fidelity | attention | roofline")
      ->required();
  rep_cmd->add_option("--runs-dir", rep_runs_dir, "experiment output dir")->required();
  rep_cmd->add_option("--format", rep_format)->check(CLI::IsMember({"csv", "json"}));
  rep_cmd->add_option("--out", rep_out, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (grid_run->parsed()) {
      ExperimentConfig cfg = load_experiment_config(grid_config);
      if (!grid_output_dir.empty()) cfg.output_dir = grid_output_dir;
      ExecuteOptions opt;
      opt.resume = grid_resume;
      opt.workers = grid_workers;
      size_t done = 0, failed = 0, cached = 0;
      opt.on_record = [&](const RunRecord& rec) {
        ++done;
        if (rec.status != "ok") ++failed;
        if (rec.from_cache) ++cached;
        std::cout << "[" << done << "] " << rec.run_id << " " << rec.status
                  << (rec.from_cache ? " (cached)" : "") << "\n";
      };
      const std::vector<RunRecord> records = execute(cfg, opt);
      std::cout << records.size() << " cells, " << failed << " failed, " << cached
                << " from cache; records in " << cfg.output_dir << "/runs\n";
      const std::vector<nlohmann::json> docs = read_run_documents(cfg.output_dir);
      for (const char* kind : {"speedup", "fidelity", "attention", "roofline"}) {
        try {
          const ReportTable table = make_report(kind, docs);
          if (table.rows.empty()) continue;
          const std::string path = cfg.output_dir + "/" + kind + ".csv";
          emit(table.to_csv(), path);
          std::cout << "wrote " << path << "\n";
        } catch (const std::exception& e) {
          // A kind can be inapplicable (no bench task, no fp32 baseline, ...).
          std::cerr << "note: skipped " << kind << " report: " << e.what() << "\n";
        }
      }
      return failed == 0 ? 0 : 1;
    }

    if (grid_expand->parsed()) {
      const ExperimentConfig cfg = load_experiment_config(expand_config);
      const GridExpansion grid_x = expand_grid(cfg);
      for (const RunParams& cell : grid_x.cells) {
        std::cout << cell.run_id << " hash=" << hash_hex(cell.config_hash) << "\n";
      }
      std::cout << grid_x.cells.size() << " cells";
      if (grid_x.dropped_seq_cells > 0) {
        std::cout << " (" << grid_x.dropped_seq_cells << " dropped)";
        for (const auto& note : grid_x.filter_notes) std::cout << "\n  " << note;
      }
      std::cout << "\n";
      return 0;
    }

    if (bench_cmd->parsed()) {
      const ModelConfig cfg = load_model_arg(bench_model, bench_seed);
      const Model model = build_model(cfg);
      const TokenBatch tokens = random_tokens(cfg.vocab, bench_batch, bench_seq, bench_seed);
      const BenchProtocol protocol{bench_warmup, bench_iters};
      const BenchStats st =
          benchmark_forward(model, tokens, resolve_policy(bench_policy), protocol);
      if (bench_csv) {
        std::cout << bench_csv_header()
                  << bench_csv_row(st, "-", bench_model, bench_policy, bench_batch, bench_seq);
      } else {
        std::cout << bench_model << " " << bench_policy << " batch=" << bench_batch
                  << " seq=" << bench_seq << "\n"
                  << "  mean " << st.mean_s * 1e3 << " ms, std " << st.std_s * 1e3
                  << " ms, p50 " << st.p50_s * 1e3 << " ms, p95 " << st.p95_s * 1e3
                  << " ms, p99 " << st.p99_s * 1e3 << " ms\n"
                  << "  throughput " << st.throughput_sps << " seq/s over "
                  << st.samples_s.size() << " iterations\n";
      }
      return 0;
    }

    if (fid_cmd->parsed()) {
      ModelConfig cfg = load_model_arg(fid_model, fid_seed);
      const TokenBatch tokens = tokens_for(cfg, fid_tokens, fid_batch, fid_seq, fid_seed);
      const Model model = fid_adversarial ? make_adversarial_model(cfg, tokens, 30.0f)
                                          : build_model(cfg);
      const ForwardTrace base = forward(model, tokens, resolve_policy("fp32"));
      const ForwardTrace cand = forward(model, tokens, resolve_policy(fid_policy));
      const LogitComparison cmp = compare_logits(base.logits, cand.logits);
      nlohmann::json out = {
          {"model", fid_model},
          {"policy", fid_policy},
          {"batch", tokens.batch},
          {"seq", tokens.seq},
          {"seed", fid_seed},
          {"adversarial", fid_adversarial},
          {"max_abs_error", cmp.max_abs_error},
          {"mean_abs_error", cmp.mean_abs_error},
          {"cosine", cmp.cosine ? nlohmann::json(*cmp.cosine) : nlohmann::json(nullptr)},
          {"finite_pairs", cmp.finite_pairs},
          {"candidate_nonfinite", cmp.candidate_nonfinite},
          {"nan_affected", cmp.nan_affected},
      };
      std::cout << out.dump(2) << "\n";
      return 0;
    }

    if (att_cmd->parsed()) {
      const ModelConfig cfg = load_model_arg(att_model, att_seed);
      const Model model = build_model(cfg);
      const TokenBatch tokens = tokens_for(cfg, att_tokens, att_batch, att_seq, att_seed);
      const ForwardTrace trace = forward(model, tokens, resolve_policy(att_policy), true);
      const AttentionStats stats = attention_profile(trace);
      std::cout << "layer,kurtosis,max_abs_score,interhead_r\n";
      for (size_t l = 0; l < stats.layers.size(); ++l) {
        const auto& ls = stats.layers[l];
        std::cout << l << ',' << ls.score_kurtosis << ',' << ls.max_abs_score << ',';
        if (ls.mean_interhead_r) std::cout << *ls.mean_interhead_r;
        std::cout << '\n';
      }
      std::cout << "# kurtosis mean " << stats.kurtosis_mean << ", std "
                << stats.kurtosis_std << "\n";
      return 0;
    }

    if (roof_cmd->parsed()) {
      const ModelConfig cfg = load_model_arg(roof_model, 0);
      const HardwareSpec hw = load_hardware_arg(roof_hw);
      std::cout << "# cold-traffic model; published qualitative bands for comparison: "
                   "Linear >=45 F/B, Softmax 2-4 F/B, Embedding ~1.5 F/B\n";
      for (const char* dn : {"f32", "f16e"}) {
        if (roof_dtype != "both" && roof_dtype != dn) continue;
        const Dtype d = dtype_from_name(dn);
        std::cout << "# hardware=" << hw.name << " dtype=" << dn
                  << " ridge=" << ridge_point(hw, d) << " flop/byte\n"
                  << roofline_csv(roofline_report(hw, cfg, roof_batch, roof_seq, d));
      }
      return 0;
    }

    if (ppl_cmd->parsed()) {
      const ModelConfig cfg = load_model_arg(ppl_model, ppl_seed);
      const Model model = build_model(cfg);
      std::vector<int32_t> stream;
      if (!ppl_tokens.empty()) {
        for (const auto& line : read_token_lines(ppl_tokens)) {
          stream.insert(stream.end(), line.begin(), line.end());
        }
      } else if (ppl_synthetic > 0) {
        stream = random_tokens(cfg.vocab, 1, ppl_synthetic, ppl_seed ^ 0x70705ULL).ids;
      } else {
        throw std::runtime_error("perplexity needs --tokens or --synthetic");
      }
      const double ppl =
          perplexity(model, stream, ppl_context, resolve_policy(ppl_policy));
      std::cout << "perplexity " << ppl << " (policy " << ppl_policy << ", context "
                << ppl_context << ", stream " << stream.size() << " tokens)\n";
      return 0;
    }

    if (rep_cmd->parsed()) {
      const std::vector<nlohmann::json> docs = read_run_documents(rep_runs_dir);
      const ReportTable table = make_report(rep_kind, docs);
      emit(rep_format == "json" ? table.to_json().dump(2) + "\n" : table.to_csv(), rep_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
