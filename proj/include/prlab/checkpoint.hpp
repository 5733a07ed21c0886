// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "prlab/model.hpp"

namespace prlab {

// Checkpoint container, all integers little-endian:
//   magic "PRLABCKP" (8 bytes), format version u32 (currently 1),
//   config blob (u32 length + UTF-8 JSON),
//   then one record per parameter tensor in canonical order:
//     u32 name length, name bytes,
//     u8 dtype tag (0 = f32, 1 = f16e),
//     u32 rank, u64 extents[rank],
//     payload (4 bytes per element for f32, 2 for f16e).
// An f16e payload stores round-to-nearest-even 16-bit encodings; loading
// widens them back to fp32 storage tagged F16E.

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'L', 'A', 'B', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Writes the model's parameters at the given storage dtype. Returns the
// total bytes written. Throws std::runtime_error on I/O failure.
uint64_t serialize_checkpoint(const Model& model, Dtype dtype, const std::string& path);

// Sum of tensor payload bytes (headers excluded) the model serializes to
// at the given dtype.
uint64_t checkpoint_payload_bytes(const Model& model, Dtype dtype);

// Reads a checkpoint back into a model. Throws std::runtime_error on bad
// magic, unsupported version, truncation, or unexpected tensor records.
Model load_checkpoint(const std::string& path);

struct ParityReport {
  double max_abs_error = 0.0;
  double mean_abs_error = 0.0;
  uint64_t compared = 0;
  bool pass = false;
};

// Pass decision used by verify_parity: strictly below the fixed logit
// tolerance of 1e-4.
inline constexpr double kParityTolerance = 1e-4;
bool parity_pass(double max_abs_error);

// Compares two logit tensors elementwise (shapes must match).
ParityReport parity_from_logits(const Tensor& a, const Tensor& b);

// Runs both models on the probe batch under the given policy and compares
// logits. Throws std::invalid_argument when the model configs differ.
ParityReport verify_parity(const Model& a, const Model& b, const TokenBatch& probe,
                           const PrecisionPolicy& policy);

}  // namespace prlab
