// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prlab/model.hpp"

namespace prlab {

// Measurement protocol: warmup iterations are timed like measured ones
// (the clock is read around each call) but their samples are discarded;
// then every measured iteration is timed individually.
struct BenchProtocol {
  int64_t warmup_iters = 10;
  int64_t measure_iters = 100;

  void validate() const;  // warmup >= 0, measure >= 1
};

// Injectable monotonic time source returning seconds. Tests substitute a
// synthetic clock; production uses steady_clock_seconds().
using Clock = std::function<double()>;
Clock steady_clock_seconds();

struct BenchStats {
  double mean_s = 0.0;
  double std_s = 0.0;  // population std over the measured samples
  double p50_s = 0.0;
  double p95_s = 0.0;
  double p99_s = 0.0;
  double throughput_sps = 0.0;  // batch / mean_s: sequences per second
  int64_t batch = 1;
  std::vector<double> samples_s;
};

// Thrown when the workload fails or the clock is non-monotonic; carries
// the samples measured before the abort.
class BenchAbort : public std::runtime_error {
 public:
  BenchAbort(const std::string& what, std::vector<double> partial)
      : std::runtime_error(what), partial_samples(std::move(partial)) {}
  std::vector<double> partial_samples;
};

// Nearest-rank percentile of a sample set: the value at 1-based rank
// ceil(p/100 * N), computed in integer arithmetic. p in [1, 100].
double nearest_rank_percentile(std::vector<double> samples, int percent);

// Times `workload` under the protocol. Runs are serialized process-wide:
// a global measurement token guarantees no two benchmark runs overlap.
BenchStats run_benchmark(const std::function<void()>& workload, int64_t batch,
                         const BenchProtocol& protocol, const Clock& clock);

// Convenience: benchmarks one forward pass configuration.
BenchStats benchmark_forward(const Model& model, const TokenBatch& tokens,
                             const PrecisionPolicy& policy, const BenchProtocol& protocol);

// Relative wall-time attribution of a forward configuration: per-class
// fractions of end-to-end latency plus the unattributed remainder
// (dispatch, slicing, allocation). Fractions sum to 1.
struct LatencyShares {
  std::map<OpClass, double> share;
  double residual = 0.0;
};

LatencyShares latency_shares(const Model& model, const TokenBatch& tokens,
                             const PrecisionPolicy& policy, const BenchProtocol& protocol);

// Least-squares slope of log(y) on log(x): the exponent b of y ~ a*x^b.
// Requires >= 2 points, all positive.
double fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys);

// Scaling study over sequence lengths: benchmarks the forward at each
// length and fits the latency power law. Lengths must hold >= 3 distinct
// values spanning at least 4x.
struct ScalingProbe {
  std::vector<int64_t> seq_lens;
  std::vector<BenchStats> stats;
  double latency_exponent = 0.0;
};

ScalingProbe scaling_probe(const ModelConfig& config, const std::vector<int64_t>& seq_lens,
                           int64_t batch, const PrecisionPolicy& policy,
                           const BenchProtocol& protocol);

// The fixed CSV schema for benchmark results.
std::string bench_csv_header();
std::string bench_csv_row(const BenchStats& stats, const std::string& config_hash,
                          const std::string& model, const std::string& policy,
                          int64_t batch, int64_t seq);

}  // namespace prlab
