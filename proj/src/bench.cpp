// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <sstream>

namespace prlab {

namespace {

// Process-wide measurement token: whoever holds it is the only running
// benchmark. Taken for the whole warmup+measure window.
std::mutex g_measurement_token;

}  // namespace

void BenchProtocol::validate() const {
  if (warmup_iters < 0) throw std::invalid_argument("warmup_iters must be >= 0");
  if (measure_iters < 1) throw std::invalid_argument("measure_iters must be >= 1");
}

Clock steady_clock_seconds() {
  return [] {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
}

double nearest_rank_percentile(std::vector<double> samples, int percent) {
  if (samples.empty()) throw std::invalid_argument("percentile of an empty sample set");
  if (percent < 1 || percent > 100) {
    throw std::invalid_argument("percentile must be in [1, 100], got " +
                                std::to_string(percent));
  }
  std::sort(samples.begin(), samples.end());
  // ceil(percent/100 * N) in integers; no float rank arithmetic.
  const size_t rank =
      (static_cast<size_t>(percent) * samples.size() + 99) / 100;
  return samples[rank - 1];
}

BenchStats run_benchmark(const std::function<void()>& workload, int64_t batch,
                         const BenchProtocol& protocol, const Clock& clock) {
  protocol.validate();
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  std::lock_guard<std::mutex> token(g_measurement_token);

  std::vector<double> samples;
  samples.reserve(static_cast<size_t>(protocol.measure_iters));
  // Warmup iterations are timed exactly like measured ones — the clock is
  // consulted around each call — but the resulting samples are discarded.
  for (int64_t i = 0; i < protocol.warmup_iters; ++i) {
    const double t0 = clock();
    try {
      workload();
    } catch (const std::exception& e) {
      throw BenchAbort(std::string("workload failed during warmup: ") + e.what(), {});
    }
    const double t1 = clock();
    if (t1 < t0) {
      throw BenchAbort("clock went backwards during warmup (" + std::to_string(t0) +
                           " -> " + std::to_string(t1) + ")",
                       {});
    }
  }
  for (int64_t i = 0; i < protocol.measure_iters; ++i) {
    const double t0 = clock();
    try {
      workload();
    } catch (const std::exception& e) {
      throw BenchAbort(std::string("workload failed at iteration ") + std::to_string(i) +
                           ": " + e.what(),
                       std::move(samples));
    }
    const double t1 = clock();
    if (t1 < t0) {
      throw BenchAbort("clock went backwards (" + std::to_string(t0) + " -> " +
                           std::to_string(t1) + ")",
                       std::move(samples));
    }
    samples.push_back(t1 - t0);
  }

  BenchStats st;
  st.batch = batch;
  st.samples_s = samples;
  double sum = 0.0;
  for (double s : samples) sum += s;
  st.mean_s = sum / static_cast<double>(samples.size());
  double var = 0.0;
  for (double s : samples) {
    const double d = s - st.mean_s;
    var += d * d;
  }
  st.std_s = std::sqrt(var / static_cast<double>(samples.size()));
  st.p50_s = nearest_rank_percentile(samples, 50);
  st.p95_s = nearest_rank_percentile(samples, 95);
  st.p99_s = nearest_rank_percentile(samples, 99);
  st.throughput_sps = static_cast<double>(batch) / st.mean_s;
  return st;
}

BenchStats benchmark_forward(const Model& model, const TokenBatch& tokens,
                             const PrecisionPolicy& policy, const BenchProtocol& protocol) {
  return run_benchmark([&] { (void)forward(model, tokens, policy); }, tokens.batch,
                       protocol, steady_clock_seconds());
}

LatencyShares latency_shares(const Model& model, const TokenBatch& tokens,
                             const PrecisionPolicy& policy, const BenchProtocol& protocol) {
  protocol.validate();
  std::lock_guard<std::mutex> token(g_measurement_token);
  for (int64_t i = 0; i < protocol.warmup_iters; ++i) {
    (void)forward(model, tokens, policy);
  }
  std::array<double, kNumOpClasses> class_seconds{};
  double wall = 0.0;
  const auto clock = steady_clock_seconds();
  for (int64_t i = 0; i < protocol.measure_iters; ++i) {
    const double t0 = clock();
    const ForwardTrace trace = forward(model, tokens, policy);
    wall += clock() - t0;
    for (size_t c = 0; c < kNumOpClasses; ++c) class_seconds[c] += trace.seconds[c];
  }
  LatencyShares shares;
  double attributed = 0.0;
  for (size_t c = 0; c < kNumOpClasses; ++c) {
    const double s = class_seconds[c] / wall;
    shares.share[static_cast<OpClass>(c)] = s;
    attributed += s;
  }
  shares.residual = std::max(0.0, 1.0 - attributed);
  return shares;
}

double fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("power-law fit needs matching x/y lengths");
  }
  if (xs.size() < 2) throw std::invalid_argument("power-law fit needs >= 2 points");
  const auto n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) {
      throw std::invalid_argument("power-law fit needs positive samples");
    }
    const double lx = std::log(xs[i]);
    const double ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("power-law fit needs distinct x values");
  return (n * sxy - sx * sy) / denom;
}

ScalingProbe scaling_probe(const ModelConfig& config, const std::vector<int64_t>& seq_lens,
                           int64_t batch, const PrecisionPolicy& policy,
                           const BenchProtocol& protocol) {
  if (seq_lens.size() < 3) throw std::invalid_argument("scaling probe needs >= 3 lengths");
  const auto [mn, mx] = std::minmax_element(seq_lens.begin(), seq_lens.end());
  if (*mn < 1 || *mx < 4 * *mn) {
    throw std::invalid_argument("scaling probe lengths must be >= 1 and span >= 4x");
  }
  ModelConfig cfg = config;
  cfg.max_positions = std::max(cfg.max_positions, *mx);
  const Model model = build_model(cfg);

  ScalingProbe probe;
  probe.seq_lens = seq_lens;
  std::vector<double> xs, ys;
  for (int64_t s : seq_lens) {
    const TokenBatch tokens = random_tokens(cfg.vocab, batch, s, cfg.seed ^ 0x5eedULL);
    BenchStats st = benchmark_forward(model, tokens, policy, protocol);
    xs.push_back(static_cast<double>(s));
    ys.push_back(st.mean_s);
    probe.stats.push_back(std::move(st));
  }
  probe.latency_exponent = fit_power_law(xs, ys);
  return probe;
}

namespace {

std::string fmt_ms(double seconds) {
  std::ostringstream os;
  os.precision(9);
  os << seconds * 1e3;
  return os.str();
}

}  // namespace

std::string bench_csv_header() {
  return "config_hash,model,policy,batch,seq,mean_ms,std_ms,p50_ms,p95_ms,p99_ms,"
         "throughput_sps\n";
}

std::string bench_csv_row(const BenchStats& stats, const std::string& config_hash,
                          const std::string& model, const std::string& policy,
                          int64_t batch, int64_t seq) {
  std::ostringstream os;
  os << config_hash << ',' << model << ',' << policy << ',' << batch << ',' << seq << ','
     << fmt_ms(stats.mean_s) << ',' << fmt_ms(stats.std_s) << ',' << fmt_ms(stats.p50_s)
     << ',' << fmt_ms(stats.p95_s) << ',' << fmt_ms(stats.p99_s) << ',';
  os.precision(9);
  os << stats.throughput_sps << '\n';
  return os.str();
}

}  // namespace prlab
