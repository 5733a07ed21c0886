// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace prlab {

namespace {

constexpr std::array<const char*, kNumOpClasses> kOpClassNames = {
    "Linear", "AttentionScoreMatmul", "Softmax", "LayerNorm",
    "Activation", "Embedding", "Residual",
};

KernelConfig f32_cfg() { return {Dtype::F32, Dtype::F32, true}; }
KernelConfig f16_full_cfg() { return {Dtype::F16E, Dtype::F16E, false}; }
KernelConfig f16_wide_accum_cfg() { return {Dtype::F16E, Dtype::F32, true}; }

}  // namespace

const char* op_class_name(OpClass c) { return kOpClassNames[static_cast<size_t>(c)]; }

std::optional<OpClass> op_class_from_name(const std::string& name) {
  for (size_t i = 0; i < kOpClassNames.size(); ++i) {
    if (name == kOpClassNames[i]) return static_cast<OpClass>(i);
  }
  return std::nullopt;
}

void PrecisionPolicy::validate() const {
  for (const KernelConfig& cfg : assignment) cfg.validate();
  double total = 0.0;
  for (const auto& [cls, share] : expected_latency_share) {
    (void)cls;
    if (!(share >= 0.0 && share <= 1.0)) {
      throw std::invalid_argument("policy '" + name + "': latency share " +
                                  std::to_string(share) + " outside [0, 1]");
    }
    total += share;
  }
  if (total > 1.0 + 1e-9) {
    throw std::invalid_argument("policy '" + name + "': latency shares sum to " +
                                std::to_string(total) + " > 1");
  }
}

PrecisionPolicy resolve_policy(const std::string& name) {
  PrecisionPolicy p;
  p.name = name;
  if (name == "fp32") {
    p.assignment.fill(f32_cfg());
  } else if (name == "full_fp16") {
    p.assignment.fill(f16_full_cfg());
  } else if (name == "hybrid") {
    p.assignment.fill(f32_cfg());
    p.config_for(OpClass::Linear) = f16_wide_accum_cfg();
    p.config_for(OpClass::AttentionScoreMatmul) = f16_wide_accum_cfg();
    p.config_for(OpClass::Activation) = f16_wide_accum_cfg();
  } else {
    throw std::invalid_argument("unknown policy '" + name +
                                "' (valid: fp32, full_fp16, hybrid)");
  }
  p.validate();
  return p;
}

PrecisionPolicy policy_from_spec(const nlohmann::json& spec) {
  if (!spec.is_object()) {
    throw std::invalid_argument("policy spec must be a JSON object");
  }
  const std::string base = spec.value("base", std::string("hybrid"));
  PrecisionPolicy p = resolve_policy(base);
  p.name = spec.value("name", base + "+overrides");

  // "overrides" adjusts selected classes; "classes" (the serialized form
  // produced by policy_to_json) carries a full assignment. Both share the
  // same per-class shape.
  const auto apply_block = [&p](const nlohmann::json& block, const char* what) {
    if (!block.is_object()) {
      throw std::invalid_argument(std::string("policy ") + what +
                                  " must be an object keyed by op class");
    }
    for (const auto& [key, entry] : block.items()) {
      const auto cls = op_class_from_name(key);
      if (!cls) {
        throw std::invalid_argument(std::string("policy ") + what +
                                    " names unknown op class '" + key + "'");
      }
      KernelConfig& cfg = p.config_for(*cls);
      if (entry.contains("compute")) {
        cfg.compute_dtype = dtype_from_name(entry.at("compute").get<std::string>());
      }
      if (entry.contains("accum")) {
        cfg.accum_dtype = dtype_from_name(entry.at("accum").get<std::string>());
      }
      if (entry.contains("stabilized")) {
        cfg.softmax_stabilized = entry.at("stabilized").get<bool>();
      }
    }
  };
  if (spec.contains("classes")) apply_block(spec.at("classes"), "classes");
  if (spec.contains("overrides")) apply_block(spec.at("overrides"), "overrides");
  if (spec.contains("expected_latency_share")) {
    for (const auto& [key, v] : spec.at("expected_latency_share").items()) {
      const auto cls = op_class_from_name(key);
      if (!cls) {
        throw std::invalid_argument("latency share names unknown op class '" + key + "'");
      }
      p.expected_latency_share[*cls] = v.get<double>();
    }
  }
  p.validate();
  return p;
}

nlohmann::json policy_to_json(const PrecisionPolicy& p) {
  nlohmann::json classes = nlohmann::json::object();
  for (OpClass c : kAllOpClasses) {
    const KernelConfig& cfg = p.config_for(c);
    classes[op_class_name(c)] = {
        {"compute", dtype_name(cfg.compute_dtype)},
        {"accum", dtype_name(cfg.accum_dtype)},
        {"stabilized", cfg.softmax_stabilized},
    };
  }
  nlohmann::json j = {{"name", p.name}, {"classes", classes}};
  if (!p.expected_latency_share.empty()) {
    nlohmann::json shares = nlohmann::json::object();
    for (const auto& [cls, share] : p.expected_latency_share) {
      shares[op_class_name(cls)] = share;
    }
    j["expected_latency_share"] = shares;
  }
  return j;
}

double predicted_fp16_speedup(const PrecisionPolicy& policy,
                              const std::map<OpClass, double>& shares,
                              const std::map<OpClass, double>& gains) {
  double covered = 0.0;
  for (const auto& [cls, share] : shares) {
    (void)cls;
    if (!(share >= 0.0 && share <= 1.0)) {
      throw std::invalid_argument("latency share " + std::to_string(share) +
                                  " outside [0, 1]");
    }
    covered += share;
  }
  if (covered > 1.0 + 1e-9) {
    throw std::invalid_argument("latency shares sum to " + std::to_string(covered) + " > 1");
  }
  // Amdahl: time' = (1 - covered) + sum share / gain, where only classes the
  // policy actually runs on the narrow lattice see their kernel gain.
  double scaled_time = 1.0 - covered;
  for (const auto& [cls, share] : shares) {
    double gain = 1.0;
    if (policy.config_for(cls).compute_dtype == Dtype::F16E) {
      const auto it = gains.find(cls);
      if (it != gains.end()) {
        if (!(it->second > 0.0)) {
          throw std::invalid_argument("kernel gain for " + std::string(op_class_name(cls)) +
                                      " must be positive");
        }
        gain = it->second;
      }
    }
    scaled_time += share / gain;
  }
  return 1.0 / scaled_time;
}

}  // namespace prlab
