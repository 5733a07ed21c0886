// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "prlab/tensor.hpp"

namespace prlab {

// Per-kernel numeric contract. compute_dtype is the lattice of inputs,
// intermediates and outputs; accum_dtype is the lattice of reduction
// accumulators. F32 compute with F16E accumulation is rejected: a wide
// pipeline never narrows only its accumulator.
struct KernelConfig {
  Dtype compute_dtype = Dtype::F32;
  Dtype accum_dtype = Dtype::F32;
  bool softmax_stabilized = true;  // only softmax consults this

  void validate() const;  // throws std::invalid_argument on a F32/F16E mix
};

// C = A x B for A [m,k], B [k,n]. Inputs are rounded onto the compute
// lattice first. Under F32 accumulation each output is an fp32 dot product
// (ascending k) rounded once at the end; under F16E accumulation every
// product and every partial sum is rounded as it is formed, in the same
// ascending-k order, which is what makes long reductions lose mass and
// saturate the way true binary16 hardware does.
Tensor matmul(const Tensor& a, const Tensor& b, const KernelConfig& cfg);

// Scaled attention scores: S = (Q x K^T) * scale for Q [s_q, d], K [s_k, d].
// The scale is folded into the final rounding of each dot product rather
// than applied as a separate rounded multiply. When capture_f32 is non-null
// it receives the fp32-accumulated, scaled scores (s_q*s_k values) before
// any narrowing -- the profiling tap used to study score distributions.
Tensor attention_scores(const Tensor& q, const Tensor& k, float scale,
                        const KernelConfig& cfg, float* capture_f32 = nullptr);

// Softmax along the last axis. The stabilized form subtracts the axis max
// before exponentiation; the unstabilized form exponentiates raw inputs,
// so scores beyond the binary16 overflow threshold (~11.09 for exp) turn
// the whole row into NaN under F16E compute. Exponentials are rounded to
// the compute lattice; the normalizing sum is reduced on the accumulation
// lattice and rounded to the compute lattice before the divide. NaN and
// inf propagate; no clamping anywhere.
Tensor softmax_lastdim(const Tensor& x, const KernelConfig& cfg);

// Layer normalization over the last axis with scale gamma and shift beta.
// Mean and population variance are reduced on the accumulation lattice;
// the normalized, scaled, shifted result is rounded to the compute lattice.
Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps, const KernelConfig& cfg);

// Exact-erf GELU, evaluated elementwise in fp32 and rounded to the compute
// lattice: 0.5 * x * (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x, const KernelConfig& cfg);

// Elementwise residual add, rounded to the compute lattice.
Tensor add(const Tensor& a, const Tensor& b, const KernelConfig& cfg);

// Embedding gather-and-add: out[i, :] = tok_table[ids[i]] + pos_table[pos(i)].
// Both gathered rows are rounded to the compute lattice before the add and
// the sum is rounded again. ids are validated against the table extent.
Tensor embed(const Tensor& tok_table, const Tensor& pos_table,
             std::span<const int32_t> ids, int64_t batch, int64_t seq,
             const KernelConfig& cfg);

// Elementwise tanh rounded to the compute lattice (pooler activation).
Tensor tanh_op(const Tensor& x, const KernelConfig& cfg);

}  // namespace prlab
