// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prlab/model.hpp"

namespace prlab {

// Peak compute and memory bandwidth of a target device. The model is the
// classic two-ceiling roofline: attainable throughput at operational
// intensity I is min(peak, bandwidth * I).
struct HardwareSpec {
  std::string name;
  double peak_flops_f32 = 0.0;  // FLOP/s
  double peak_flops_f16 = 0.0;  // FLOP/s
  double bandwidth = 0.0;       // bytes/s

  double peak(Dtype d) const { return d == Dtype::F32 ? peak_flops_f32 : peak_flops_f16; }
  void validate() const;  // all three positive
};

// Consumer-GPU reference point used throughout the reports: 35.6 TFLOP/s
// fp32, 142.3 TFLOP/s fp16 tensor cores, 936.2 GB/s memory bandwidth.
HardwareSpec rtx3090_spec();

HardwareSpec hardware_from_json(const nlohmann::json& j);
nlohmann::json hardware_to_json(const HardwareSpec& h);

// Work and cold traffic of one op-class invocation: every operand read
// once from memory, every output written once, no cache reuse. `width` is
// the element width in bytes of the dtype the op runs at.
struct OpCost {
  double flops = 0.0;
  double bytes = 0.0;
  double intensity() const { return flops / bytes; }
};

// Closed forms per op shape (w = element width in bytes):
//   matmul [m,k]x[k,n]: 2mkn FLOPs, w*(mk + kn + mn) bytes
//   softmax over rows of n: 5n FLOPs/row, 2wn bytes/row
//   layernorm over slices of n: 8n FLOPs/slice, 4wn bytes/slice
//   gelu: 8 FLOPs/element, 2w bytes/element
//   residual add: 1 FLOP/element, 3w bytes/element
//   embedding: 2 FLOPs/element of output, 3w bytes/element
OpCost matmul_cost(int64_t m, int64_t k, int64_t n, size_t width);
OpCost softmax_cost(int64_t rows, int64_t n, size_t width);
OpCost layernorm_cost(int64_t slices, int64_t n, size_t width);
OpCost gelu_cost(int64_t elements, size_t width);
OpCost residual_cost(int64_t elements, size_t width);
OpCost embedding_cost(int64_t elements, size_t width);

// Aggregate cost of everything a forward pass runs under the given op
// class (the encoder classification head is excluded; the tied output
// projection counts as Linear). Classes that do no work at this config
// (e.g. attention with zero layers) return zeros.
OpCost op_cost(OpClass cls, const ModelConfig& config, int64_t batch, int64_t seq,
               Dtype dtype);

// min(peak, bandwidth * intensity); intensity must be positive.
double attainable(const HardwareSpec& hw, Dtype dtype, double intensity);

// Intensity at which the two ceilings meet: peak / bandwidth.
double ridge_point(const HardwareSpec& hw, Dtype dtype);

enum class Bound : uint8_t { MemoryBound = 0, ComputeBound = 1 };
const char* bound_name(Bound b);

// ComputeBound iff the bandwidth ceiling at this intensity reaches peak
// (ties are compute-bound). Evaluated as bandwidth*intensity >= peak --
// the same expression attainable() takes the min over -- so the two can
// never disagree.
Bound classify(const HardwareSpec& hw, Dtype dtype, double intensity);

// One roofline table row per op class with nonzero work, at the given
// dtype's element width and peak.
struct RooflineRow {
  OpClass op_class;
  double flops = 0.0;
  double bytes = 0.0;
  double intensity = 0.0;
  double attainable_flops = 0.0;
  Bound bound = Bound::MemoryBound;
};

std::vector<RooflineRow> roofline_report(const HardwareSpec& hw, const ModelConfig& config,
                                         int64_t batch, int64_t seq, Dtype dtype);

// CSV with header "op_class,flops,bytes,intensity,attainable_flops,bound".
std::string roofline_csv(const std::vector<RooflineRow>& rows);
nlohmann::json roofline_json(const std::vector<RooflineRow>& rows);

}  // namespace prlab
