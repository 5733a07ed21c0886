// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "prlab/kernels.hpp"

using namespace prlab;

namespace {

const KernelConfig kF32{Dtype::F32, Dtype::F32, true};
const KernelConfig kF16Acc{Dtype::F16E, Dtype::F16E, true};
const KernelConfig kF16Wide{Dtype::F16E, Dtype::F32, true};
const KernelConfig kF16Unstable{Dtype::F16E, Dtype::F16E, false};

Tensor filled(std::vector<int64_t> shape, float v, Dtype d = Dtype::F32) {
  Tensor t(shape, d);
  for (float& x : t.data) x = v;
  return t;
}

}  // namespace

TEST_CASE("config validation rejects wide compute with narrow accumulation") {
  KernelConfig bad{Dtype::F32, Dtype::F16E, true};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(kF32.validate());
  CHECK_NOTHROW(kF16Acc.validate());
  CHECK_NOTHROW(kF16Wide.validate());
}

TEST_CASE("long reductions stall on the narrow lattice but not the wide one") {
  // Summing 2049 ones: once the running sum reaches 2048 the lattice step
  // is 2, so +1 lands on a tie and rounds back down, forever. Wide
  // accumulation reaches 2049 in fp32; the narrow output then rounds that
  // single value once (2049 ties back to 2048), while the fp32 kernel
  // keeps it.
  {
    const Tensor a = filled({1, 2049}, 1.0f);
    const Tensor b = filled({2049, 1}, 1.0f);
    CHECK(matmul(a, b, kF16Acc).data[0] == 2048.0f);
    CHECK(matmul(a, b, kF16Wide).data[0] == 2048.0f);
    CHECK(matmul(a, b, kF32).data[0] == 2049.0f);
  }
  // Summing 2050 ones separates stagnation from final rounding: the
  // narrow accumulator is still stuck at 2048, but 2050 lies on the
  // lattice, so the wide accumulator's one final rounding keeps it.
  {
    const Tensor a = filled({1, 2050}, 1.0f);
    const Tensor b = filled({2050, 1}, 1.0f);
    CHECK(matmul(a, b, kF16Acc).data[0] == 2048.0f);
    CHECK(matmul(a, b, kF16Wide).data[0] == 2050.0f);
    CHECK(matmul(a, b, kF32).data[0] == 2050.0f);
  }
}

TEST_CASE("fp32-accumulated matmul tracks a double-precision oracle") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  const int64_t m = 17, k = 33, n = 9;
  Tensor a({m, k}), b({k, n});
  for (float& x : a.data) x = dist(rng);
  for (float& x : b.data) x = dist(rng);
  const Tensor c = matmul(a, b, kF32);
  const std::vector<double> ref = oracle::matmul_f64(a.data, b.data, m, k, n);
  for (size_t i = 0; i < ref.size(); ++i) {
    // fp32 sum of k products: error <= k * eps * sum |a||b|, generously.
    CHECK(std::fabs(ref[i] - c.data[i]) <= static_cast<double>(k) * 1.2e-7 * 33.0);
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(filled({2, 3}, 1.0f), filled({4, 2}, 1.0f), kF32),
                  std::invalid_argument);
}

TEST_CASE("stabilized narrow softmax keeps extreme rows finite") {
  const Tensor x = Tensor::from({1, 2}, {12.0f, 0.0f});
  const Tensor y = softmax_lastdim(x, kF16Acc);
  // After subtracting the max: exp(0)=1 and exp(-12) lands on the
  // subnormal 103 * 2^-24; the sum rounds back to 1 on the half lattice.
  CHECK(y.data[0] == 1.0f);
  CHECK(y.data[1] == 6.139278411865234e-06f);
}

TEST_CASE("unstabilized narrow softmax overflows to NaN on large scores") {
  const Tensor x = Tensor::from({1, 2}, {12.0f, 0.0f});
  const Tensor y = softmax_lastdim(x, kF16Unstable);
  // exp(12) overflows the half range -> inf; inf/inf is NaN while the
  // finite numerator divided by inf collapses to zero.
  CHECK(std::isnan(y.data[0]));
  CHECK(y.data[1] == 0.0f);
}

TEST_CASE("softmax rows sum to one under fp32 and stay normalized when narrow") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> dist(-4.0f, 4.0f);
  Tensor x({8, 16});
  for (float& v : x.data) v = dist(rng);
  const Tensor y32 = softmax_lastdim(x, kF32);
  const Tensor y16 = softmax_lastdim(x, kF16Acc);
  for (int64_t r = 0; r < 8; ++r) {
    double s32 = 0.0, s16 = 0.0;
    for (int64_t c = 0; c < 16; ++c) {
      s32 += y32.at2(r, c);
      s16 += y16.at2(r, c);
      CHECK(y32.at2(r, c) >= 0.0f);
    }
    CHECK(s32 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s16 == doctest::Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("attention scores fold the scale into the final rounding") {
  // Small integers keep every fp32 step exact, so the narrow result must
  // be exactly round16(dot * scale).
  const Tensor q = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor k = Tensor::from({2, 3}, {7, 8, 9, 10, 11, 12});
  const float scale = 0.125f;
  std::vector<float> tap(4, 0.0f);
  const Tensor s = attention_scores(q, k, scale, kF16Acc, tap.data());
  const std::vector<double> ref = oracle::matmul_f64(
      q.data, {7.0f, 10.0f, 8.0f, 11.0f, 9.0f, 12.0f}, 2, 3, 2);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(tap[i] == static_cast<float>(ref[i]) * scale);  // fp32 tap, pre-rounding
    CHECK(s.data[i] == oracle::round16(static_cast<float>(ref[i]) * scale));
  }
  const Tensor s32 = attention_scores(q, k, scale, kF32, nullptr);
  for (size_t i = 0; i < 4; ++i) CHECK(s32.data[i] == static_cast<float>(ref[i]) * scale);
}

TEST_CASE("layernorm normalizes and falls back to beta on constant rows") {
  Tensor gamma = filled({6}, 1.0f);
  Tensor beta = filled({6}, 0.25f);
  const Tensor constant = filled({1, 6}, 3.0f);
  const Tensor y = layernorm_lastdim(constant, gamma, beta, 1e-5f, kF32);
  for (float v : y.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));

  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
  Tensor x({4, 64});
  for (float& v : x.data) v = dist(rng);
  beta = filled({64}, 0.0f);
  gamma = filled({64}, 1.0f);
  const Tensor z = layernorm_lastdim(x, gamma, beta, 1e-5f, kF32);
  for (int64_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (int64_t c = 0; c < 64; ++c) mean += z.at2(r, c);
    mean /= 64.0;
    for (int64_t c = 0; c < 64; ++c) var += (z.at2(r, c) - mean) * (z.at2(r, c) - mean);
    var /= 64.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("gelu matches the closed form at reference points") {
  const Tensor x = Tensor::from({3}, {0.0f, 1.0f, -1.0f});
  const Tensor y = gelu(x, kF32);
  CHECK(y.data[0] == 0.0f);
  CHECK(y.data[1] == doctest::Approx(0.8413447460685429).epsilon(1e-6));
  CHECK(y.data[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-6));
}

TEST_CASE("elementwise add rounds on the narrow lattice") {
  const Tensor a = Tensor::from({1}, {2048.0f});
  const Tensor b = Tensor::from({1}, {1.0f});
  CHECK(add(a, b, kF16Acc).data[0] == 2048.0f);  // tie back to even
  CHECK(add(a, b, kF32).data[0] == 2049.0f);
}

TEST_CASE("embedding gathers token and position rows and validates ids") {
  const Tensor tok = Tensor::from({3, 2}, {0, 0, 10, 20, 30, 40});
  const Tensor pos = Tensor::from({2, 2}, {1, 2, 3, 4});
  const std::vector<int32_t> ids = {2, 1};
  const Tensor e = embed(tok, pos, ids, 1, 2, kF32);
  CHECK(e.data[0] == 31.0f);  // row 2 + position 0
  CHECK(e.data[1] == 42.0f);
  CHECK(e.data[2] == 13.0f);  // row 1 + position 1
  CHECK(e.data[3] == 24.0f);

  const std::vector<int32_t> bad = {3, 0};  // vocab is 3 rows: id 3 out of range
  CHECK_THROWS_AS(embed(tok, pos, bad, 1, 2, kF32), std::out_of_range);
  const std::vector<int32_t> long_seq = {0, 0, 0};  // exceeds the 2 position rows
  CHECK_THROWS_AS(embed(tok, pos, long_seq, 1, 3, kF32), std::out_of_range);
}
