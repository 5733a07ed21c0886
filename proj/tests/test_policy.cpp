// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include <map>

#include <doctest.h>

#include "prlab/model.hpp"
#include "prlab/policy.hpp"

using namespace prlab;

TEST_CASE("built-in policies pin the documented dtype assignments") {
  const PrecisionPolicy fp32 = resolve_policy("fp32");
  for (OpClass c : kAllOpClasses) {
    CHECK(fp32.config_for(c).compute_dtype == Dtype::F32);
    CHECK(fp32.config_for(c).accum_dtype == Dtype::F32);
  }
  CHECK(fp32.config_for(OpClass::Softmax).softmax_stabilized);

  const PrecisionPolicy full = resolve_policy("full_fp16");
  for (OpClass c : kAllOpClasses) {
    CHECK(full.config_for(c).compute_dtype == Dtype::F16E);
    CHECK(full.config_for(c).accum_dtype == Dtype::F16E);
  }
  CHECK_FALSE(full.config_for(OpClass::Softmax).softmax_stabilized);

  const PrecisionPolicy hybrid = resolve_policy("hybrid");
  for (OpClass c : {OpClass::Linear, OpClass::AttentionScoreMatmul, OpClass::Activation}) {
    CHECK(hybrid.config_for(c).compute_dtype == Dtype::F16E);
    CHECK(hybrid.config_for(c).accum_dtype == Dtype::F32);
  }
  for (OpClass c : {OpClass::Softmax, OpClass::LayerNorm, OpClass::Residual,
                    OpClass::Embedding}) {
    CHECK(hybrid.config_for(c).compute_dtype == Dtype::F32);
    CHECK(hybrid.config_for(c).accum_dtype == Dtype::F32);
  }
  CHECK(hybrid.config_for(OpClass::Softmax).softmax_stabilized);

  CHECK_THROWS_WITH_AS(resolve_policy("mixed"),
                       doctest::Contains("fp32"), std::invalid_argument);
}

TEST_CASE("custom policy specs inherit from a base and override per class") {
  const nlohmann::json spec = {
      {"base", "hybrid"},
      {"overrides",
       {{"Softmax", {{"compute", "f16e"}, {"accum", "f16e"}, {"stabilized", false}}}}}};
  const PrecisionPolicy p = policy_from_spec(spec);
  CHECK(p.config_for(OpClass::Softmax).compute_dtype == Dtype::F16E);
  CHECK_FALSE(p.config_for(OpClass::Softmax).softmax_stabilized);
  // Untouched classes keep the base assignment.
  CHECK(p.config_for(OpClass::Linear).compute_dtype == Dtype::F16E);
  CHECK(p.config_for(OpClass::Linear).accum_dtype == Dtype::F32);
  CHECK(p.config_for(OpClass::LayerNorm).compute_dtype == Dtype::F32);

  const nlohmann::json bad = {
      {"base", "fp32"},
      {"overrides", {{"Linear", {{"compute", "f32"}, {"accum", "f16e"}}}}}};
  CHECK_THROWS_AS(policy_from_spec(bad), std::invalid_argument);
}

TEST_CASE("policy json round-trips") {
  for (const char* name : {"fp32", "hybrid", "full_fp16"}) {
    const PrecisionPolicy p = resolve_policy(name);
    const PrecisionPolicy back = policy_from_spec(policy_to_json(p));
    CHECK(back.name == p.name);
    for (OpClass c : kAllOpClasses) {
      CAPTURE(name);
      CAPTURE(op_class_name(c));
      CHECK(back.config_for(c).compute_dtype == p.config_for(c).compute_dtype);
      CHECK(back.config_for(c).accum_dtype == p.config_for(c).accum_dtype);
      CHECK(back.config_for(c).softmax_stabilized == p.config_for(c).softmax_stabilized);
    }
  }
}

TEST_CASE("forward kernel routing honors the policy assignment") {
  const ModelConfig cfg = ModelConfig::decoder_toy();
  const Model model = build_model(cfg);
  const TokenBatch tokens = random_tokens(cfg.vocab, 1, 8, 42);

  const ForwardTrace hybrid = forward(model, tokens, resolve_policy("hybrid"));
  CHECK(hybrid.calls(OpClass::Linear, Dtype::F16E) > 0);
  CHECK(hybrid.calls(OpClass::Linear, Dtype::F32) == 0);
  CHECK(hybrid.calls(OpClass::AttentionScoreMatmul, Dtype::F16E) > 0);
  CHECK(hybrid.calls(OpClass::Softmax, Dtype::F16E) == 0);
  CHECK(hybrid.calls(OpClass::Softmax, Dtype::F32) > 0);
  CHECK(hybrid.calls(OpClass::LayerNorm, Dtype::F16E) == 0);
  CHECK(hybrid.calls(OpClass::Residual, Dtype::F16E) == 0);
  CHECK(hybrid.calls(OpClass::Embedding, Dtype::F16E) == 0);
  CHECK(hybrid.calls(OpClass::Activation, Dtype::F16E) > 0);

  const ForwardTrace full = forward(model, tokens, resolve_policy("full_fp16"));
  for (OpClass c : kAllOpClasses) {
    CAPTURE(op_class_name(c));
    CHECK(full.calls(c, Dtype::F32) == 0);
  }

  const ForwardTrace fp32 = forward(model, tokens, resolve_policy("fp32"));
  for (OpClass c : kAllOpClasses) {
    CAPTURE(op_class_name(c));
    CHECK(fp32.calls(c, Dtype::F16E) == 0);
  }
  // Same model, same policy class structure: call counts must agree.
  for (OpClass c : kAllOpClasses) {
    CHECK(fp32.calls(c, Dtype::F32) + fp32.calls(c, Dtype::F16E) ==
          full.calls(c, Dtype::F32) + full.calls(c, Dtype::F16E));
  }
}

TEST_CASE("projected speedup follows the serial-fraction law") {
  const std::map<OpClass, double> shares = {{OpClass::Linear, 0.611},
                                            {OpClass::Softmax, 0.083},
                                            {OpClass::LayerNorm, 0.061},
                                            {OpClass::Embedding, 0.042}};
  const std::map<OpClass, double> gains = {{OpClass::Linear, 2.0}};

  // hybrid runs Linear narrow: 0.611 of the time halves, the rest stays.
  const double s = predicted_fp16_speedup(resolve_policy("hybrid"), shares, gains);
  CHECK(s == doctest::Approx(1.0 / (1.0 - 0.611 + 0.611 / 2.0)).epsilon(1e-12));
  CHECK(s == doctest::Approx(1.4398848).epsilon(1e-6));

  // fp32 never runs anything narrow: no speedup at all.
  CHECK(predicted_fp16_speedup(resolve_policy("fp32"), shares, gains) == 1.0);

  // A gain on a class the policy keeps wide contributes nothing.
  const std::map<OpClass, double> norm_gain = {{OpClass::LayerNorm, 3.0}};
  CHECK(predicted_fp16_speedup(resolve_policy("hybrid"), shares, norm_gain) == 1.0);

  const std::map<OpClass, double> bad_gain = {{OpClass::Linear, 0.0}};
  CHECK_THROWS_AS(predicted_fp16_speedup(resolve_policy("hybrid"), shares, bad_gain),
                  std::invalid_argument);
  std::map<OpClass, double> heavy = shares;
  heavy[OpClass::Residual] = 0.5;  // pushes the share sum past 1
  CHECK_THROWS_AS(predicted_fp16_speedup(resolve_policy("hybrid"), heavy, gains),
                  std::invalid_argument);
}
