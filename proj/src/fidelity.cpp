// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/fidelity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prlab {

LogitComparison compare_logits(const Tensor& baseline, const Tensor& candidate) {
  if (baseline.shape != candidate.shape) {
    throw std::invalid_argument("logit shapes differ: " + shape_str(baseline.shape) +
                                " vs " + shape_str(candidate.shape));
  }
  LogitComparison r;
  double err_sum = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < baseline.data.size(); ++i) {
    const float b = baseline.data[i];
    const float c = candidate.data[i];
    if (!std::isfinite(c)) ++r.candidate_nonfinite;
    if (!std::isfinite(b) || !std::isfinite(c)) continue;
    const double d = std::abs(static_cast<double>(b) - c);
    if (d > r.max_abs_error) r.max_abs_error = d;
    err_sum += d;
    dot += static_cast<double>(b) * c;
    na += static_cast<double>(b) * b;
    nb += static_cast<double>(c) * c;
    ++r.finite_pairs;
  }
  r.nan_affected = r.candidate_nonfinite > 0;
  if (r.finite_pairs > 0) {
    r.mean_abs_error = err_sum / static_cast<double>(r.finite_pairs);
    if (na > 0.0 && nb > 0.0) r.cosine = dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return r;
}

FidelityReport aggregate_fidelity(std::span<const LogitComparison> runs) {
  if (runs.empty()) throw std::invalid_argument("no comparison runs to aggregate");
  FidelityReport rep;
  rep.runs = runs.size();
  double mean_sum = 0.0;
  uint64_t affected = 0;
  for (const LogitComparison& r : runs) {
    rep.max_abs_error = std::max(rep.max_abs_error, r.max_abs_error);
    mean_sum += r.mean_abs_error;
    if (r.cosine && (!rep.min_cosine || *r.cosine < *rep.min_cosine)) {
      rep.min_cosine = r.cosine;
    }
    if (r.nan_affected) ++affected;
  }
  rep.mean_abs_error = mean_sum / static_cast<double>(runs.size());
  rep.nan_rate = static_cast<double>(affected) / static_cast<double>(runs.size());
  return rep;
}

double nan_rate(std::span<const bool> flags) {
  if (flags.empty()) throw std::invalid_argument("nan_rate over zero runs");
  uint64_t n = 0;
  for (bool f : flags) n += f ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(flags.size());
}

double kurtosis(std::span<const float> xs) {
  if (xs.size() < 4) {
    throw std::invalid_argument("kurtosis needs >= 4 samples, got " +
                                std::to_string(xs.size()));
  }
  const auto n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (float x : xs) mean += x;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (float x : xs) {
    const double d = x - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  if (m2 == 0.0) throw std::invalid_argument("kurtosis of a constant sample is undefined");
  return m4 / (m2 * m2);
}

namespace {

// Pearson correlation of two equal-length vectors; throws when either side
// has zero variance.
double pearson(const float* a, const float* b, int64_t n) {
  const auto dn = static_cast<double>(n);
  double ma = 0.0, mb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= dn;
  mb /= dn;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) {
    throw std::invalid_argument("correlation of a constant score map is undefined");
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace

double interhead_correlation(const Tensor& head_scores) {
  if (head_scores.rank() < 2) {
    throw std::invalid_argument("inter-head correlation wants [heads, elements] data, got " +
                                shape_str(head_scores.shape));
  }
  const int64_t heads = head_scores.shape[0];
  const int64_t n = head_scores.numel() / heads;
  if (heads < 2) throw std::invalid_argument("inter-head correlation needs >= 2 heads");
  if (n < 2) throw std::invalid_argument("inter-head correlation needs >= 2 scores per head");
  double sum = 0.0;
  int64_t pairs = 0;
  for (int64_t i = 0; i < heads; ++i) {
    for (int64_t j = i + 1; j < heads; ++j) {
      sum += pearson(head_scores.ptr() + i * n, head_scores.ptr() + j * n, n);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

AttentionStats attention_profile(const ForwardTrace& trace) {
  if (trace.layer_scores.empty()) {
    throw std::invalid_argument("trace kept no attention scores (retain_scores was off?)");
  }
  AttentionStats stats;
  for (const Tensor& scores : trace.layer_scores) {
    // scores: [batch, heads, seq, seq], fp32 pre-mask tap.
    const int64_t B = scores.shape[0], H = scores.shape[1];
    const int64_t per_head = scores.numel() / (B * H);
    LayerAttentionStats ls;
    ls.score_kurtosis = kurtosis(std::span<const float>(scores.data));
    for (float v : scores.data) {
      ls.max_abs_score = std::max(ls.max_abs_score, static_cast<double>(std::abs(v)));
    }
    if (H >= 2) {
      double r_sum = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        Tensor item;
        item.shape = {H, per_head};
        item.data.assign(scores.data.begin() + b * H * per_head,
                         scores.data.begin() + (b + 1) * H * per_head);
        r_sum += interhead_correlation(item);
      }
      ls.mean_interhead_r = r_sum / static_cast<double>(B);
    }
    stats.layers.push_back(ls);
  }
  double mean = 0.0;
  for (const auto& ls : stats.layers) mean += ls.score_kurtosis;
  mean /= static_cast<double>(stats.layers.size());
  double var = 0.0;
  for (const auto& ls : stats.layers) {
    const double d = ls.score_kurtosis - mean;
    var += d * d;
  }
  stats.kurtosis_mean = mean;
  stats.kurtosis_std = std::sqrt(var / static_cast<double>(stats.layers.size()));
  return stats;
}

MarginReport margin_analysis(std::span<const float> baseline,
                             std::span<const float> candidate, double threshold) {
  if (baseline.size() != candidate.size()) {
    throw std::invalid_argument("margin inputs differ in length: " +
                                std::to_string(baseline.size()) + " vs " +
                                std::to_string(candidate.size()));
  }
  if (baseline.empty()) throw std::invalid_argument("margin analysis over zero samples");
  for (size_t i = 0; i < baseline.size(); ++i) {
    for (float p : {baseline[i], candidate[i]}) {
      if (!(p >= 0.0f && p <= 1.0f)) {
        throw std::invalid_argument("probability " + std::to_string(p) +
                                    " at index " + std::to_string(i) + " outside [0, 1]");
      }
    }
  }
  MarginReport r;
  r.min_margin_baseline = std::numeric_limits<double>::infinity();
  r.min_margin_candidate = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < baseline.size(); ++i) {
    const double mb = baseline[i] - threshold;
    const double mc = candidate[i] - threshold;
    r.min_margin_baseline = std::min(r.min_margin_baseline, mb);
    r.min_margin_candidate = std::min(r.min_margin_candidate, mc);
    if ((mb > 0.0 && mc < 0.0) || (mb < 0.0 && mc > 0.0)) {
      ++r.flip_count;
      r.flipped_indices.push_back(i);
    }
  }
  return r;
}

namespace {

// Sum of next-token negative log-likelihoods over one window (positions
// 0..seq-2 predict their successors). Log-softmax is evaluated in double,
// stabilized by the row max; non-finite logits poison the result with NaN.
double window_nll_sum(const Tensor& logits, std::span<const int32_t> window) {
  if (logits.rank() != 3 || logits.shape[0] != 1) {
    throw std::invalid_argument("perplexity wants [1, seq, vocab] logits, got " +
                                shape_str(logits.shape));
  }
  const int64_t seq = logits.shape[1], vocab = logits.shape[2];
  if (static_cast<int64_t>(window.size()) != seq) {
    throw std::invalid_argument("window length " + std::to_string(window.size()) +
                                " does not match logits seq " + std::to_string(seq));
  }
  if (seq < 2) throw std::invalid_argument("perplexity needs >= 2 tokens per window");
  double nll = 0.0;
  for (int64_t t = 0; t + 1 < seq; ++t) {
    const float* row = logits.ptr() + t * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t v = 0; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
    if (!std::isfinite(mx)) return std::numeric_limits<double>::quiet_NaN();
    double denom = 0.0;
    for (int64_t v = 0; v < vocab; ++v) denom += std::exp(static_cast<double>(row[v]) - mx);
    const int32_t target = window[static_cast<size_t>(t + 1)];
    if (target < 0 || target >= vocab) {
      throw std::out_of_range("target token id " + std::to_string(target) +
                              " outside vocab of " + std::to_string(vocab));
    }
    nll -= (static_cast<double>(row[target]) - mx) - std::log(denom);
  }
  return nll;
}

}  // namespace

double perplexity_from_logits(const Tensor& logits, std::span<const int32_t> window) {
  const double nll = window_nll_sum(logits, window);
  return std::exp(nll / static_cast<double>(window.size() - 1));
}

double perplexity(const Model& model, std::span<const int32_t> stream, int64_t context_len,
                  const PrecisionPolicy& policy) {
  if (model.config.archetype != Archetype::DecoderOnly) {
    throw std::invalid_argument("perplexity needs a decoder_only model");
  }
  if (context_len < 2) throw std::invalid_argument("context_len must be >= 2");
  if (context_len > model.config.max_positions) {
    throw std::invalid_argument("context_len " + std::to_string(context_len) +
                                " exceeds max_positions " +
                                std::to_string(model.config.max_positions));
  }
  if (static_cast<int64_t>(stream.size()) <= context_len) {
    throw std::invalid_argument("token stream of " + std::to_string(stream.size()) +
                                " is too short for context_len " +
                                std::to_string(context_len) + " (need context_len + 1)");
  }
  double nll_sum = 0.0;
  uint64_t predicted = 0;
  for (size_t off = 0; off < stream.size(); off += static_cast<size_t>(context_len)) {
    const size_t len = std::min(static_cast<size_t>(context_len), stream.size() - off);
    if (len < 2) break;  // a trailing single token predicts nothing
    TokenBatch window;
    window.batch = 1;
    window.seq = static_cast<int64_t>(len);
    window.ids.assign(stream.begin() + static_cast<int64_t>(off),
                      stream.begin() + static_cast<int64_t>(off + len));
    const ForwardTrace trace = forward(model, window, policy);
    nll_sum += window_nll_sum(trace.logits, window.ids);
    predicted += len - 1;
  }
  return std::exp(nll_sum / static_cast<double>(predicted));
}

Model make_adversarial_model(const ModelConfig& config, const TokenBatch& probe,
                             float target_max_score) {
  config.validate();
  if (config.num_layers < 1) {
    throw std::invalid_argument("adversarial construction needs >= 1 layer");
  }
  if (!(target_max_score > 0.0f)) {
    throw std::invalid_argument("target_max_score must be positive");
  }
  Model m = build_model(config);

  // Measure the widest layer-0 score this model produces on the probe under
  // full fp32, then rescale Wq/Wk so the max lands exactly on the target.
  // Layer-0 scores depend only on the embeddings, and scores are bilinear
  // in (Wq, Wk): scaling both by s scales every score by s^2.
  const ForwardTrace trace = forward(m, probe, resolve_policy("fp32"), true);
  double max_score = 0.0;
  for (float v : trace.layer_scores.front().data) {
    max_score = std::max(max_score, static_cast<double>(std::abs(v)));
  }
  if (max_score == 0.0) {
    throw std::invalid_argument("probe produced all-zero layer-0 scores; cannot rescale");
  }
  const auto s = static_cast<float>(std::sqrt(target_max_score / max_score));
  LayerParams& l0 = m.layers.front();
  for (float& v : l0.wq.data) v *= s;
  for (float& v : l0.bq.data) v *= s;
  for (float& v : l0.wk.data) v *= s;
  for (float& v : l0.bk.data) v *= s;
  return m;
}

}  // namespace prlab
