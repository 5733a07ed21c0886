// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prlab/model.hpp"

namespace prlab {

// Elementwise comparison of a candidate logit tensor against a baseline.
// Error statistics cover positions where both sides are finite; cosine is
// over the same positions (absent when either restricted vector has zero
// norm or no finite pair exists). Any non-finite candidate element marks
// the run as NaN-affected.
struct LogitComparison {
  double max_abs_error = 0.0;
  double mean_abs_error = 0.0;
  std::optional<double> cosine;
  uint64_t finite_pairs = 0;
  uint64_t candidate_nonfinite = 0;
  bool nan_affected = false;
};

LogitComparison compare_logits(const Tensor& baseline, const Tensor& candidate);

// Worst-case aggregate of many comparison runs: max error across runs,
// minimum cosine, fraction of NaN-affected runs.
struct FidelityReport {
  double max_abs_error = 0.0;
  double mean_abs_error = 0.0;  // mean of per-run means
  std::optional<double> min_cosine;
  double nan_rate = 0.0;
  uint64_t runs = 0;
};

FidelityReport aggregate_fidelity(std::span<const LogitComparison> runs);

// Fraction of flagged runs; at least one run required.
double nan_rate(std::span<const bool> flags);

// Pearson (non-excess) kurtosis m4 / m2^2 of a sample. Requires >= 4
// samples and nonzero variance; throws std::invalid_argument otherwise.
// A normal sample sits near 3.
double kurtosis(std::span<const float> xs);

// Mean pairwise Pearson correlation between flattened per-head score maps
// of one attention layer, given as [heads, rows*cols] data. Requires >= 2
// heads; a constant head (zero variance) is an error.
double interhead_correlation(const Tensor& head_scores);

// Distribution statistics of the fp32 score tap of one forward pass.
struct LayerAttentionStats {
  double score_kurtosis = 0.0;
  double max_abs_score = 0.0;
  std::optional<double> mean_interhead_r;  // absent for single-head models
};

struct AttentionStats {
  std::vector<LayerAttentionStats> layers;
  double kurtosis_mean = 0.0;
  double kurtosis_std = 0.0;  // population std across layers
};

// Consumes the retained score taps of a forward(..., retain_scores=true)
// trace; throws when the trace kept no scores.
AttentionStats attention_profile(const ForwardTrace& trace);

// Decision-margin comparison of two probability vectors against a
// threshold. margin = p - threshold; a flip is a sign change of the margin
// between baseline and candidate.
struct MarginReport {
  double min_margin_baseline = 0.0;
  double min_margin_candidate = 0.0;
  uint64_t flip_count = 0;
  std::vector<size_t> flipped_indices;
};

MarginReport margin_analysis(std::span<const float> baseline,
                             std::span<const float> candidate, double threshold = 0.5);

// Sliding-window perplexity of a decoder over a token stream: the stream
// is cut into non-overlapping windows of context_len (a trailing window of
// at least 2 tokens is kept), each window is scored with one forward pass,
// and perplexity is exp of the mean token NLL. Log-probabilities are
// evaluated in double from the model's logits. Requires a decoder model
// and stream length > context_len.
double perplexity(const Model& model, std::span<const int32_t> stream, int64_t context_len,
                  const PrecisionPolicy& policy);

// Perplexity of an explicit logits tensor [1, seq, vocab] against the
// stream that produced it (predictions at positions 0..seq-2). Exposed for
// calibration tests.
double perplexity_from_logits(const Tensor& logits, std::span<const int32_t> window);

// Builds a model whose first layer drives pre-softmax attention scores up
// to target_max_score on the probe batch: the layer-0 query/key projections
// are rescaled by sqrt(target / measured_max), which scales every layer-0
// score by exactly that ratio squared. Used to construct inputs past the
// narrow-lattice exp overflow threshold. Requires num_layers >= 1.
Model make_adversarial_model(const ModelConfig& config, const TokenBatch& probe,
                             float target_max_score);

}  // namespace prlab
