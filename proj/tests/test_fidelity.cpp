// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "prlab/fidelity.hpp"
#include "prlab/model.hpp"
#include "prlab/policy.hpp"

using namespace prlab;

TEST_CASE("logit comparison measures finite pairs and flags non-finite output") {
  const Tensor base = Tensor::from({1, 4}, {1.0f, -2.0f, 3.0f, 0.5f});
  const LogitComparison same = compare_logits(base, base);
  CHECK(same.max_abs_error == 0.0);
  CHECK(same.mean_abs_error == 0.0);
  CHECK(same.cosine.has_value());
  CHECK(*same.cosine == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.finite_pairs == 4);
  CHECK_FALSE(same.nan_affected);

  Tensor off = base;
  off.data[1] = -2.5f;
  const LogitComparison diff = compare_logits(base, off);
  CHECK(diff.max_abs_error == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(diff.mean_abs_error == doctest::Approx(0.125).epsilon(1e-12));

  Tensor poisoned = base;
  poisoned.data[2] = std::numeric_limits<float>::quiet_NaN();
  const LogitComparison bad = compare_logits(base, poisoned);
  CHECK(bad.nan_affected);
  CHECK(bad.candidate_nonfinite == 1);
  CHECK(bad.finite_pairs == 3);

  CHECK_THROWS_AS(compare_logits(base, Tensor::from({1, 3}, {1, 2, 3})),
                  std::invalid_argument);
}

TEST_CASE("fidelity aggregation keeps the worst case across runs") {
  LogitComparison a;
  a.max_abs_error = 1e-3;
  a.mean_abs_error = 2e-4;
  a.cosine = 0.9999;
  a.finite_pairs = 10;
  LogitComparison b;
  b.max_abs_error = 4e-3;
  b.mean_abs_error = 1e-4;
  b.cosine = 0.9995;
  b.finite_pairs = 10;
  b.nan_affected = true;
  const std::vector<LogitComparison> runs = {a, b};
  const FidelityReport rep = aggregate_fidelity(runs);
  CHECK(rep.max_abs_error == 4e-3);
  CHECK(rep.mean_abs_error == doctest::Approx(1.5e-4).epsilon(1e-12));
  CHECK(*rep.min_cosine == 0.9995);
  CHECK(rep.nan_rate == 0.5);
  CHECK(rep.runs == 2);

  const std::vector<bool> flags = {true, false, false, false};
  const bool arr[] = {true, false, false, false};
  CHECK(nan_rate(std::span<const bool>(arr, 4)) == 0.25);
  (void)flags;
}

TEST_CASE("kurtosis matches frozen references and rejects degenerate input") {
  const std::vector<float> ramp = {1.0f, 2.0f, 3.0f, 4.0f};
  CHECK(kurtosis(ramp) == doctest::Approx(1.64).epsilon(1e-12));
  const std::vector<float> spike = {0.0f, 0.0f, 0.0f, 0.0f, 10.0f};
  CHECK(kurtosis(spike) == doctest::Approx(3.25).epsilon(1e-12));

  const std::vector<float> constant = {2.0f, 2.0f, 2.0f, 2.0f};
  CHECK_THROWS_AS(kurtosis(constant), std::invalid_argument);
  const std::vector<float> three = {1.0f, 2.0f, 3.0f};
  CHECK_THROWS_AS(kurtosis(three), std::invalid_argument);

  // A heavy-tailed sample scores above the Gaussian 3.
  std::vector<float> heavy(512, 0.1f);
  for (size_t i = 0; i < 8; ++i) heavy[i * 64] = (i % 2 ? 12.0f : -12.0f);
  CHECK(kurtosis(heavy) > 10.0);
}

TEST_CASE("inter-head correlation recognizes aligned and opposed heads") {
  const Tensor aligned = Tensor::from({2, 4}, {1, 2, 3, 4, 2, 4, 6, 8});
  CHECK(interhead_correlation(aligned) == doctest::Approx(1.0).epsilon(1e-12));
  const Tensor opposed = Tensor::from({2, 4}, {1, 2, 3, 4, -1, -2, -3, -4});
  CHECK(interhead_correlation(opposed) == doctest::Approx(-1.0).epsilon(1e-12));
  const Tensor mixed = Tensor::from({2, 3}, {1, 2, 3, 1, 2, 4});
  CHECK(interhead_correlation(mixed) == doctest::Approx(0.9819805060619656).epsilon(1e-9));
  CHECK_THROWS_AS(interhead_correlation(Tensor::from({1, 4}, {1, 2, 3, 4})),
                  std::invalid_argument);
}

TEST_CASE("attention profiles cover every layer of the trace") {
  const ModelConfig cfg = ModelConfig::decoder_toy();
  const Model model = build_model(cfg);
  const TokenBatch tokens = random_tokens(cfg.vocab, 1, 16, 9);
  const ForwardTrace trace = forward(model, tokens, resolve_policy("fp32"), true);
  REQUIRE(trace.layer_scores.size() == static_cast<size_t>(cfg.num_layers));

  const AttentionStats stats = attention_profile(trace);
  REQUIRE(stats.layers.size() == static_cast<size_t>(cfg.num_layers));
  double mean = 0.0;
  for (const LayerAttentionStats& layer : stats.layers) {
    CHECK(layer.score_kurtosis > 0.0);
    CHECK(layer.max_abs_score > 0.0);
    REQUIRE(layer.mean_interhead_r.has_value());  // 4 heads
    CHECK(*layer.mean_interhead_r >= -1.0);
    CHECK(*layer.mean_interhead_r <= 1.0);
    mean += layer.score_kurtosis;
  }
  mean /= static_cast<double>(stats.layers.size());
  CHECK(stats.kurtosis_mean == doctest::Approx(mean).epsilon(1e-12));

  const ForwardTrace bare = forward(model, tokens, resolve_policy("fp32"), false);
  CHECK_THROWS_AS(attention_profile(bare), std::invalid_argument);
}

TEST_CASE("margin analysis counts decision flips against the threshold") {
  const std::vector<float> baseline = {0.5087f, 0.5124f, 0.5093f};
  const std::vector<float> candidate = {0.4969f, 0.4982f, 0.4958f};
  const MarginReport rep = margin_analysis(baseline, candidate);
  CHECK(rep.flip_count == 3);
  CHECK(rep.flipped_indices == std::vector<size_t>{0, 1, 2});
  CHECK(rep.min_margin_baseline == doctest::Approx(0.0087).epsilon(1e-5));
  CHECK(rep.min_margin_candidate == doctest::Approx(-0.0042).epsilon(1e-5));

  const std::vector<float> stay = {0.51f, 0.52f};
  const std::vector<float> still = {0.505f, 0.53f};
  CHECK(margin_analysis(stay, still).flip_count == 0);

  const std::vector<float> out_of_range = {1.2f, 0.5f};
  CHECK_THROWS_AS(margin_analysis(out_of_range, still), std::invalid_argument);
  CHECK_THROWS_AS(margin_analysis(stay, std::vector<float>{0.5f}), std::invalid_argument);
}

TEST_CASE("uniform logits give perplexity equal to the vocabulary size") {
  const int64_t vocab = 320;
  Tensor logits({1, 8, vocab});
  for (float& v : logits.data) v = 0.7f;  // any constant works
  std::vector<int32_t> window(8);
  for (size_t i = 0; i < window.size(); ++i) window[i] = static_cast<int32_t>(i * 13 % vocab);
  const double ppl = perplexity_from_logits(logits, window);
  CHECK(ppl == doctest::Approx(static_cast<double>(vocab)).epsilon(1e-12));
}

TEST_CASE("stream perplexity is the exp of the pooled window NLL") {
  ModelConfig cfg = ModelConfig::decoder_toy();
  cfg.num_layers = 2;
  cfg.seed = 17;
  const Model model = build_model(cfg);
  const PrecisionPolicy fp32 = resolve_policy("fp32");
  const int64_t context = 16;
  const TokenBatch stream = random_tokens(cfg.vocab, 1, 2 * context, 31);

  const double full = perplexity(model, stream.ids, context, fp32);
  const std::vector<int32_t> first(stream.ids.begin(), stream.ids.begin() + context);
  const std::vector<int32_t> second(stream.ids.begin() + context, stream.ids.end());
  const double p1 = perplexity(model, first, context, fp32);
  const double p2 = perplexity(model, second, context, fp32);
  // log-additivity over non-overlapping windows: each window predicts
  // context-1 tokens, so the pooled NLL is the mean of the two window NLLs.
  CHECK(std::log(full) ==
        doctest::Approx(0.5 * (std::log(p1) + std::log(p2))).epsilon(1e-9));

  CHECK(full > 0.0);
  CHECK(std::isfinite(full));
  CHECK_THROWS_AS(perplexity(model, first, 64, fp32), std::invalid_argument);
  const Model enc = build_model(ModelConfig::encoder_toy());
  CHECK_THROWS_AS(perplexity(enc, stream.ids, context, fp32), std::invalid_argument);
}

TEST_CASE("adversarial rescaling drives layer-0 scores to the target") {
  const ModelConfig cfg = ModelConfig::decoder_toy();
  const TokenBatch probe = random_tokens(cfg.vocab, 1, 32, 77);
  const Model adv = make_adversarial_model(cfg, probe, 30.0f);

  const ForwardTrace trace = forward(adv, probe, resolve_policy("fp32"), true);
  double max_abs = 0.0;
  for (float v : trace.layer_scores.front().data) {
    max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
  }
  CHECK(max_abs == doctest::Approx(30.0).epsilon(0.05));

  // Past exp overflow (~11.09) the unstabilized narrow softmax poisons the
  // logits; the stabilized wide-accumulation policies stay finite.
  const Tensor fp32_logits = forward(adv, probe, resolve_policy("fp32")).logits;
  const Tensor full_logits = forward(adv, probe, resolve_policy("full_fp16")).logits;
  const Tensor hyb_logits = forward(adv, probe, resolve_policy("hybrid")).logits;
  CHECK(compare_logits(fp32_logits, full_logits).nan_affected);
  CHECK_FALSE(compare_logits(fp32_logits, hyb_logits).nan_affected);
  CHECK_FALSE(compare_logits(fp32_logits, fp32_logits).nan_affected);
}
