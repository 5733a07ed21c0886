// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/roofline.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace prlab {

void HardwareSpec::validate() const {
  if (!(peak_flops_f32 > 0.0) || !(peak_flops_f16 > 0.0) || !(bandwidth > 0.0)) {
    throw std::invalid_argument("hardware spec '" + name +
                                "' needs positive peaks and bandwidth");
  }
}

HardwareSpec rtx3090_spec() {
  return {"rtx3090", 35.6e12, 142.3e12, 936.2e9};
}

HardwareSpec hardware_from_json(const nlohmann::json& j) {
  HardwareSpec h;
  h.name = j.value("name", std::string("custom"));
  h.peak_flops_f32 = j.at("peak_flops_f32").get<double>();
  h.peak_flops_f16 = j.at("peak_flops_f16").get<double>();
  h.bandwidth = j.at("bandwidth").get<double>();
  h.validate();
  return h;
}

nlohmann::json hardware_to_json(const HardwareSpec& h) {
  return {{"name", h.name},
          {"peak_flops_f32", h.peak_flops_f32},
          {"peak_flops_f16", h.peak_flops_f16},
          {"bandwidth", h.bandwidth}};
}

namespace {

double w(size_t width) { return static_cast<double>(width); }

void check_extents(std::initializer_list<int64_t> extents) {
  for (int64_t e : extents) {
    if (e < 1) throw std::invalid_argument("op cost extents must be >= 1");
  }
}

}  // namespace

OpCost matmul_cost(int64_t m, int64_t k, int64_t n, size_t width) {
  check_extents({m, k, n});
  const double dm = static_cast<double>(m), dk = static_cast<double>(k),
               dn = static_cast<double>(n);
  return {2.0 * dm * dk * dn, w(width) * (dm * dk + dk * dn + dm * dn)};
}

OpCost softmax_cost(int64_t rows, int64_t n, size_t width) {
  check_extents({rows, n});
  const double e = static_cast<double>(rows) * static_cast<double>(n);
  return {5.0 * e, 2.0 * w(width) * e};
}

OpCost layernorm_cost(int64_t slices, int64_t n, size_t width) {
  check_extents({slices, n});
  const double e = static_cast<double>(slices) * static_cast<double>(n);
  return {8.0 * e, 4.0 * w(width) * e};
}

OpCost gelu_cost(int64_t elements, size_t width) {
  check_extents({elements});
  const double e = static_cast<double>(elements);
  return {8.0 * e, 2.0 * w(width) * e};
}

OpCost residual_cost(int64_t elements, size_t width) {
  check_extents({elements});
  const double e = static_cast<double>(elements);
  return {1.0 * e, 3.0 * w(width) * e};
}

OpCost embedding_cost(int64_t elements, size_t width) {
  check_extents({elements});
  const double e = static_cast<double>(elements);
  // One token row read, one position row read, one output row written,
  // one add plus one copy per element.
  return {2.0 * e, 3.0 * w(width) * e};
}

OpCost op_cost(OpClass cls, const ModelConfig& config, int64_t batch, int64_t seq,
               Dtype dtype) {
  config.validate();
  if (batch < 1 || seq < 1) throw std::invalid_argument("op_cost needs batch, seq >= 1");
  const size_t width = dtype_width(dtype);
  const int64_t B = batch, S = seq, h = config.hidden, f = config.ffn;
  const int64_t L = config.num_layers, H = config.heads, hd = config.head_dim();
  OpCost total;
  auto acc = [&total](OpCost c, int64_t times) {
    total.flops += c.flops * static_cast<double>(times);
    total.bytes += c.bytes * static_cast<double>(times);
  };
  switch (cls) {
    case OpClass::Linear: {
      // A zero-layer model is an embedding lookup and nothing else: no
      // projections and no tied logits head.
      if (L > 0) {
        acc(matmul_cost(B * S, h, h, width), 4 * L);   // q, k, v, output proj
        acc(matmul_cost(B * S, h, f, width), L);       // FFN expand
        acc(matmul_cost(B * S, f, h, width), L);       // FFN contract
        acc(matmul_cost(B * S, h, config.vocab, width), 1);  // tied logits
      }
      break;
    }
    case OpClass::AttentionScoreMatmul: {
      if (L > 0) {
        acc(matmul_cost(S, hd, S, width), L * B * H);  // QK^T per head
        acc(matmul_cost(S, S, hd, width), L * B * H);  // scores x V per head
      }
      break;
    }
    case OpClass::Softmax: {
      if (L > 0) acc(softmax_cost(B * H * S, S, width), L);
      break;
    }
    case OpClass::LayerNorm: {
      // Two per layer plus the final norm; the final norm is skipped by a
      // zero-layer (embeddings-only) model.
      if (L > 0) acc(layernorm_cost(B * S, h, width), 2 * L + 1);
      break;
    }
    case OpClass::Activation: {
      if (L > 0) acc(gelu_cost(B * S * f, width), L);
      break;
    }
    case OpClass::Embedding: {
      acc(embedding_cost(B * S * h, width), 1);
      break;
    }
    case OpClass::Residual: {
      if (L > 0) acc(residual_cost(B * S * h, width), 2 * L);
      break;
    }
  }
  return total;
}

double attainable(const HardwareSpec& hw, Dtype dtype, double intensity) {
  hw.validate();
  if (!(intensity > 0.0)) {
    throw std::invalid_argument("operational intensity must be positive");
  }
  return std::min(hw.peak(dtype), hw.bandwidth * intensity);
}

double ridge_point(const HardwareSpec& hw, Dtype dtype) {
  hw.validate();
  return hw.peak(dtype) / hw.bandwidth;
}

const char* bound_name(Bound b) {
  return b == Bound::ComputeBound ? "ComputeBound" : "MemoryBound";
}

Bound classify(const HardwareSpec& hw, Dtype dtype, double intensity) {
  hw.validate();
  if (!(intensity > 0.0)) {
    throw std::invalid_argument("operational intensity must be positive");
  }
  return hw.bandwidth * intensity >= hw.peak(dtype) ? Bound::ComputeBound
                                                    : Bound::MemoryBound;
}

std::vector<RooflineRow> roofline_report(const HardwareSpec& hw, const ModelConfig& config,
                                         int64_t batch, int64_t seq, Dtype dtype) {
  hw.validate();
  std::vector<RooflineRow> rows;
  for (OpClass cls : kAllOpClasses) {
    const OpCost cost = op_cost(cls, config, batch, seq, dtype);
    if (cost.bytes == 0.0) continue;  // class does no work at this config
    RooflineRow row;
    row.op_class = cls;
    row.flops = cost.flops;
    row.bytes = cost.bytes;
    row.intensity = cost.intensity();
    row.attainable_flops = attainable(hw, dtype, row.intensity);
    row.bound = classify(hw, dtype, row.intensity);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string fmt_g(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

std::string roofline_csv(const std::vector<RooflineRow>& rows) {
  std::ostringstream os;
  os << "op_class,flops,bytes,intensity,attainable_flops,bound\n";
  for (const RooflineRow& r : rows) {
    os << op_class_name(r.op_class) << ',' << fmt_g(r.flops) << ',' << fmt_g(r.bytes) << ','
       << fmt_g(r.intensity) << ',' << fmt_g(r.attainable_flops) << ','
       << bound_name(r.bound) << '\n';
  }
  return os.str();
}

nlohmann::json roofline_json(const std::vector<RooflineRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const RooflineRow& r : rows) {
    arr.push_back({{"op_class", op_class_name(r.op_class)},
                   {"flops", r.flops},
                   {"bytes", r.bytes},
                   {"intensity", r.intensity},
                   {"attainable_flops", r.attainable_flops},
                   {"bound", bound_name(r.bound)}});
  }
  return arr;
}

}  // namespace prlab
