// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "prlab/kernels.hpp"

namespace prlab {

// The seven operation classes a forward pass is partitioned into. Every
// kernel invocation belongs to exactly one class, and a precision policy
// assigns one kernel config per class.
enum class OpClass : uint8_t {
  Linear = 0,              // QKV/output projections, FFN matmuls, logits
  AttentionScoreMatmul,    // QK^T and attention-weighted V
  Softmax,
  LayerNorm,
  Activation,              // GELU, pooler tanh
  Embedding,
  Residual,
};

inline constexpr int kNumOpClasses = 7;
inline constexpr std::array<OpClass, kNumOpClasses> kAllOpClasses = {
    OpClass::Linear,     OpClass::AttentionScoreMatmul,
    OpClass::Softmax,    OpClass::LayerNorm,
    OpClass::Activation, OpClass::Embedding,
    OpClass::Residual,
};

const char* op_class_name(OpClass c);
std::optional<OpClass> op_class_from_name(const std::string& name);

// A named, total assignment of kernel configs to operation classes, plus
// the expected latency shares used by the speedup projection (empty when
// no profile is attached).
struct PrecisionPolicy {
  std::string name;
  std::array<KernelConfig, kNumOpClasses> assignment;
  std::map<OpClass, double> expected_latency_share;

  const KernelConfig& config_for(OpClass c) const {
    return assignment[static_cast<size_t>(c)];
  }
  KernelConfig& config_for(OpClass c) { return assignment[static_cast<size_t>(c)]; }

  // Validates every kernel config plus the latency shares (each in [0,1],
  // summing to at most 1). Throws std::invalid_argument.
  void validate() const;
};

// The three built-in policies:
//   fp32       -- everything F32 (the baseline),
//   full_fp16  -- everything F16E with F16E accumulation and an
//                 unstabilized softmax,
//   hybrid     -- F16E compute with F32 accumulation for Linear,
//                 AttentionScoreMatmul and Activation; F32 (stabilized
//                 softmax) everywhere else.
// Unknown names throw with the list of valid ones.
PrecisionPolicy resolve_policy(const std::string& name);

// Builds a policy from a JSON spec:
//   {"name": "...", "base": "hybrid", "overrides": {"LayerNorm":
//     {"compute": "f16e", "accum": "f32", "stabilized": true}, ...}}
// Classes absent from "overrides" inherit the base policy (default hybrid);
// override fields absent inherit the base entry for that class.
PrecisionPolicy policy_from_spec(const nlohmann::json& spec);

// Serialized form of a policy (round-trips through policy_from_spec).
nlohmann::json policy_to_json(const PrecisionPolicy& p);

// Amdahl-style projection of the end-to-end speedup from running the
// policy's F16E-compute classes at the given per-class kernel gains
// (classes missing from `gains` are assumed not to speed up). `shares`
// maps op classes to their fraction of baseline latency; the remainder
// 1 - sum(shares) is unattributed time that never speeds up.
double predicted_fp16_speedup(const PrecisionPolicy& policy,
                              const std::map<OpClass, double>& shares,
                              const std::map<OpClass, double>& gains);

}  // namespace prlab
