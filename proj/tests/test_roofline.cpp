// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <random>

#include <doctest.h>

#include "prlab/roofline.hpp"

using namespace prlab;

TEST_CASE("attainable throughput is the roofline minimum") {
  const HardwareSpec hw = rtx3090_spec();
  // At 1.5 FLOP/byte the narrow peak is irrelevant: bandwidth rules.
  CHECK(attainable(hw, Dtype::F16E, 1.5) ==
        doctest::Approx(1.4043e12).epsilon(0.001));
  // Far past the ridge the peak rules.
  CHECK(attainable(hw, Dtype::F16E, 1e4) == hw.peak_flops_f16);
  CHECK(attainable(hw, Dtype::F32, 1e4) == hw.peak_flops_f32);
  CHECK_THROWS_AS(attainable(hw, Dtype::F32, 0.0), std::invalid_argument);

  // Monotone in intensity.
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> dist(0.01, 1e4);
  for (int i = 0; i < 200; ++i) {
    double a = dist(rng), b = dist(rng);
    if (a > b) std::swap(a, b);
    CHECK(attainable(hw, Dtype::F16E, a) <= attainable(hw, Dtype::F16E, b));
  }
}

TEST_CASE("ridge points sit where bandwidth meets peak") {
  const HardwareSpec hw = rtx3090_spec();
  CHECK(ridge_point(hw, Dtype::F16E) == doctest::Approx(152.0).epsilon(0.001));
  CHECK(ridge_point(hw, Dtype::F32) == doctest::Approx(38.026).epsilon(0.001));
  // At the ridge the two roofline arms agree.
  const double r = ridge_point(hw, Dtype::F16E);
  CHECK(attainable(hw, Dtype::F16E, r) == doctest::Approx(hw.peak_flops_f16).epsilon(1e-12));
}

TEST_CASE("classification is consistent with the attainable minimum") {
  const HardwareSpec hw = rtx3090_spec();
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> dist(0.01, 400.0);
  for (int i = 0; i < 1000; ++i) {
    const double intensity = dist(rng);
    const Dtype d = (rng() & 1) ? Dtype::F16E : Dtype::F32;
    const Bound b = classify(hw, d, intensity);
    const bool at_peak = attainable(hw, d, intensity) >= hw.peak(d);
    CAPTURE(intensity);
    CHECK((b == Bound::ComputeBound) == at_peak);
  }
  // A tie (intensity exactly at the ridge) counts as compute bound.
  HardwareSpec flat{"flat", 1e12, 1e12, 1e12};
  CHECK(classify(flat, Dtype::F32, 1.0) == Bound::ComputeBound);
  CHECK(classify(flat, Dtype::F32, 0.999) == Bound::MemoryBound);
}

TEST_CASE("cost closed forms match hand arithmetic") {
  // 1024^3 matmul, fp32: 2*2^30 FLOPs over 4*(3*2^20) bytes = 2048/12.
  const OpCost m32 = matmul_cost(1024, 1024, 1024, 4);
  CHECK(m32.flops == 2.0 * 1024 * 1024 * 1024);
  CHECK(m32.bytes == 4.0 * 3 * 1024 * 1024);
  CHECK(m32.intensity() == doctest::Approx(2048.0 / 12.0).epsilon(1e-12));
  const OpCost m16 = matmul_cost(1024, 1024, 1024, 2);
  CHECK(m16.intensity() == doctest::Approx(2.0 * m32.intensity()).epsilon(1e-12));

  // Against the respective ridges both land compute bound.
  const HardwareSpec hw = rtx3090_spec();
  CHECK(classify(hw, Dtype::F32, m32.intensity()) == Bound::ComputeBound);
  CHECK(classify(hw, Dtype::F16E, m16.intensity()) == Bound::ComputeBound);

  // Softmax at fp32 width: 5n FLOPs over 8n bytes.
  const OpCost sm = softmax_cost(7, 256, 4);
  CHECK(sm.flops == 5.0 * 7 * 256);
  CHECK(sm.bytes == 2.0 * 4 * 7 * 256);
  CHECK(sm.intensity() == doctest::Approx(0.625).epsilon(1e-12));

  CHECK(layernorm_cost(3, 64, 4).intensity() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gelu_cost(100, 4).intensity() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(residual_cost(100, 4).intensity() ==
        doctest::Approx(1.0 / 12.0).epsilon(1e-12));
  CHECK(embedding_cost(100, 4).intensity() ==
        doctest::Approx(2.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("per-class costs scale with the model and drop empty classes") {
  const ModelConfig toy = ModelConfig::decoder_toy();
  const HardwareSpec hw = rtx3090_spec();

  const std::vector<RooflineRow> rows = roofline_report(hw, toy, 1, 32, Dtype::F32);
  bool saw_linear = false, saw_attention = false;
  for (const RooflineRow& r : rows) {
    CHECK(r.flops > 0.0);
    CHECK(r.bytes > 0.0);
    CHECK(r.intensity == doctest::Approx(r.flops / r.bytes).epsilon(1e-12));
    if (r.op_class == OpClass::Linear) saw_linear = true;
    if (r.op_class == OpClass::AttentionScoreMatmul) saw_attention = true;
  }
  CHECK(saw_linear);
  CHECK(saw_attention);

  // A zero-layer model degenerates to the embedding lookup: no blocks, no
  // final norm, no tied head — the report is a single Embedding row.
  ModelConfig bare = toy;
  bare.num_layers = 0;
  const std::vector<RooflineRow> bare_rows = roofline_report(hw, bare, 1, 32, Dtype::F32);
  REQUIRE(bare_rows.size() == 1);
  CHECK(bare_rows[0].op_class == OpClass::Embedding);
  CHECK(bare_rows[0].flops > 0.0);

  // Doubling the batch doubles every class's work, leaving intensity
  // untouched for the batch-linear classes.
  const std::vector<RooflineRow> doubled = roofline_report(hw, toy, 2, 32, Dtype::F32);
  REQUIRE(doubled.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].op_class == OpClass::Linear) {
      // Weight traffic is shared across the batch, so intensity rises.
      CHECK(doubled[i].intensity > rows[i].intensity);
    }
    CHECK(doubled[i].flops == doctest::Approx(2.0 * rows[i].flops).epsilon(1e-12));
  }
}

TEST_CASE("csv and json surfaces carry the fixed schema") {
  const HardwareSpec hw = rtx3090_spec();
  const std::vector<RooflineRow> rows =
      roofline_report(hw, ModelConfig::decoder_toy(), 1, 16, Dtype::F32);
  const std::string csv = roofline_csv(rows);
  CHECK(csv.rfind("op_class,flops,bytes,intensity,attainable_flops,bound\n", 0) == 0);
  const nlohmann::json j = roofline_json(rows);
  REQUIRE(j.is_array());
  CHECK(j.size() == rows.size());
  CHECK(j[0].contains("op_class"));
  CHECK(j[0].contains("bound"));
}

TEST_CASE("hardware specs validate and round-trip through json") {
  HardwareSpec hw = rtx3090_spec();
  CHECK(hw.peak_flops_f32 == 35.6e12);
  CHECK(hw.peak_flops_f16 == 142.3e12);
  CHECK(hw.bandwidth == 936.2e9);
  const HardwareSpec back = hardware_from_json(hardware_to_json(hw));
  CHECK(back.name == hw.name);
  CHECK(back.peak_flops_f32 == hw.peak_flops_f32);
  CHECK(back.bandwidth == hw.bandwidth);
  hw.bandwidth = 0.0;
  CHECK_THROWS_AS(hw.validate(), std::invalid_argument);
}
