// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace prlab {

namespace {

// Returns t viewed on the compute lattice, materializing a rounded copy
// only when narrowing is actually needed.
const Tensor& on_lattice(const Tensor& t, Dtype d, Tensor& storage) {
  if (d == Dtype::F16E && t.dtype != Dtype::F16E) {
    storage = cast(t, d);
    return storage;
  }
  return t;
}

void check_2d(const Tensor& t, const char* role) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(role) + " must be 2-D, got shape " +
                                shape_str(t.shape));
  }
}

}  // namespace

void KernelConfig::validate() const {
  if (compute_dtype == Dtype::F32 && accum_dtype == Dtype::F16E) {
    throw std::invalid_argument(
        "invalid kernel config: f32 compute with f16e accumulation");
  }
}

Tensor matmul(const Tensor& a_in, const Tensor& b_in, const KernelConfig& cfg) {
  cfg.validate();
  check_2d(a_in, "matmul lhs");
  check_2d(b_in, "matmul rhs");
  if (a_in.shape[1] != b_in.shape[0]) {
    throw std::invalid_argument("matmul inner extents differ: " + shape_str(a_in.shape) +
                                " x " + shape_str(b_in.shape));
  }
  Tensor sa, sb;
  const Tensor& a = on_lattice(a_in, cfg.compute_dtype, sa);
  const Tensor& b = on_lattice(b_in, cfg.compute_dtype, sb);
  const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];

  Tensor out({m, n}, cfg.compute_dtype);
  // Both branches accumulate each output in ascending-k order; the loop
  // nest only changes the traversal, not the reduction order.
  if (cfg.accum_dtype == Dtype::F16E) {
    for (int64_t i = 0; i < m; ++i) {
      float* orow = out.ptr() + i * n;
      for (int64_t kk = 0; kk < k; ++kk) {
        const float av = a.at2(i, kk);
        const float* brow = b.ptr() + kk * n;
        for (int64_t j = 0; j < n; ++j) {
          orow[j] = round16(orow[j] + round16(av * brow[j]));
        }
      }
    }
  } else {
    std::vector<float> acc(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (int64_t kk = 0; kk < k; ++kk) {
        const float av = a.at2(i, kk);
        const float* brow = b.ptr() + kk * n;
        for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * brow[j];
      }
      float* orow = out.ptr() + i * n;
      for (int64_t j = 0; j < n; ++j) {
        orow[j] = conform(acc[static_cast<size_t>(j)], cfg.compute_dtype);
      }
    }
  }
  return out;
}

Tensor attention_scores(const Tensor& q_in, const Tensor& k_in, float scale,
                        const KernelConfig& cfg, float* capture_f32) {
  cfg.validate();
  check_2d(q_in, "attention q");
  check_2d(k_in, "attention k");
  if (q_in.shape[1] != k_in.shape[1]) {
    throw std::invalid_argument("attention head extents differ: " + shape_str(q_in.shape) +
                                " vs " + shape_str(k_in.shape));
  }
  Tensor sq, sk;
  const Tensor& q = on_lattice(q_in, cfg.compute_dtype, sq);
  const Tensor& k = on_lattice(k_in, cfg.compute_dtype, sk);
  const int64_t s_q = q.shape[0], s_k = k.shape[0], d = q.shape[1];

  Tensor out({s_q, s_k}, cfg.compute_dtype);
  for (int64_t i = 0; i < s_q; ++i) {
    const float* qrow = q.ptr() + i * d;
    for (int64_t j = 0; j < s_k; ++j) {
      const float* krow = k.ptr() + j * d;
      float value;
      if (cfg.accum_dtype == Dtype::F16E) {
        float acc = 0.0f;
        for (int64_t t = 0; t < d; ++t) acc = round16(acc + round16(qrow[t] * krow[t]));
        value = round16(acc * scale);
        if (capture_f32 != nullptr) {
          float ref = 0.0f;
          for (int64_t t = 0; t < d; ++t) ref += qrow[t] * krow[t];
          capture_f32[i * s_k + j] = ref * scale;
        }
      } else {
        float acc = 0.0f;
        for (int64_t t = 0; t < d; ++t) acc += qrow[t] * krow[t];
        const float scaled = acc * scale;
        if (capture_f32 != nullptr) capture_f32[i * s_k + j] = scaled;
        value = conform(scaled, cfg.compute_dtype);
      }
      out.at2(i, j) = value;
    }
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x_in, const KernelConfig& cfg) {
  cfg.validate();
  if (x_in.rank() == 0 || x_in.shape.back() == 0) {
    throw std::invalid_argument("softmax needs a non-empty last axis, got shape " +
                                shape_str(x_in.shape));
  }
  Tensor sx;
  const Tensor& x = on_lattice(x_in, cfg.compute_dtype, sx);
  const int64_t n = x.shape.back();
  const int64_t rows = x.numel() / n;

  Tensor out;
  out.shape = x.shape;
  out.dtype = cfg.compute_dtype;
  out.data.resize(static_cast<size_t>(x.numel()));

  for (int64_t r = 0; r < rows; ++r) {
    const float* in = x.ptr() + r * n;
    float* o = out.ptr() + r * n;
    float shift = 0.0f;
    if (cfg.softmax_stabilized) {
      shift = -std::numeric_limits<float>::infinity();
      for (int64_t i = 0; i < n; ++i) shift = in[i] > shift ? in[i] : shift;
    }
    // Exponentials on the compute lattice. Without stabilization, inputs
    // past the overflow threshold of the lattice exponentiate to inf and
    // the divide below turns the row into inf/inf = NaN.
    for (int64_t i = 0; i < n; ++i) {
      const float e = cfg.softmax_stabilized ? std::exp(in[i] - shift) : std::exp(in[i]);
      o[i] = conform(e, cfg.compute_dtype);
    }
    float sum = 0.0f;
    if (cfg.accum_dtype == Dtype::F16E) {
      for (int64_t i = 0; i < n; ++i) sum = round16(sum + o[i]);
    } else {
      for (int64_t i = 0; i < n; ++i) sum += o[i];
    }
    sum = conform(sum, cfg.compute_dtype);
    for (int64_t i = 0; i < n; ++i) o[i] = conform(o[i] / sum, cfg.compute_dtype);
  }
  return out;
}

Tensor layernorm_lastdim(const Tensor& x_in, const Tensor& gamma_in, const Tensor& beta_in,
                         float eps, const KernelConfig& cfg) {
  cfg.validate();
  if (x_in.rank() == 0 || x_in.shape.back() == 0) {
    throw std::invalid_argument("layernorm needs a non-empty last axis, got shape " +
                                shape_str(x_in.shape));
  }
  const int64_t n = x_in.shape.back();
  if (gamma_in.numel() != n || beta_in.numel() != n) {
    throw std::invalid_argument("layernorm scale/shift extents " +
                                std::to_string(gamma_in.numel()) + "/" +
                                std::to_string(beta_in.numel()) + " do not match axis " +
                                std::to_string(n));
  }
  Tensor sx, sg, sb;
  const Tensor& x = on_lattice(x_in, cfg.compute_dtype, sx);
  const Tensor& gamma = on_lattice(gamma_in, cfg.compute_dtype, sg);
  const Tensor& beta = on_lattice(beta_in, cfg.compute_dtype, sb);
  const int64_t rows = x.numel() / n;
  const bool narrow_accum = cfg.accum_dtype == Dtype::F16E;

  Tensor out;
  out.shape = x.shape;
  out.dtype = cfg.compute_dtype;
  out.data.resize(static_cast<size_t>(x.numel()));

  for (int64_t r = 0; r < rows; ++r) {
    const float* in = x.ptr() + r * n;
    float* o = out.ptr() + r * n;
    float sum = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
      sum = narrow_accum ? round16(sum + in[i]) : sum + in[i];
    }
    const float mean = conform(sum / static_cast<float>(n), cfg.accum_dtype);
    float var_sum = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
      const float d = conform(in[i] - mean, cfg.accum_dtype);
      const float sq = conform(d * d, cfg.accum_dtype);
      var_sum = narrow_accum ? round16(var_sum + sq) : var_sum + sq;
    }
    const float var = conform(var_sum / static_cast<float>(n), cfg.accum_dtype);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (int64_t i = 0; i < n; ++i) {
      o[i] = conform(gamma.data[static_cast<size_t>(i)] * ((in[i] - mean) * inv) +
                         beta.data[static_cast<size_t>(i)],
                     cfg.compute_dtype);
    }
  }
  return out;
}

Tensor gelu(const Tensor& x_in, const KernelConfig& cfg) {
  cfg.validate();
  Tensor sx;
  const Tensor& x = on_lattice(x_in, cfg.compute_dtype, sx);
  Tensor out;
  out.shape = x.shape;
  out.dtype = cfg.compute_dtype;
  out.data.resize(x.data.size());
  constexpr float kInvSqrt2 = 0.70710678118654752440f;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const float v = x.data[i];
    out.data[i] = conform(0.5f * v * (1.0f + std::erf(v * kInvSqrt2)), cfg.compute_dtype);
  }
  return out;
}

Tensor add(const Tensor& a_in, const Tensor& b_in, const KernelConfig& cfg) {
  cfg.validate();
  if (a_in.shape != b_in.shape) {
    throw std::invalid_argument("add shapes differ: " + shape_str(a_in.shape) + " vs " +
                                shape_str(b_in.shape));
  }
  Tensor sa, sb;
  const Tensor& a = on_lattice(a_in, cfg.compute_dtype, sa);
  const Tensor& b = on_lattice(b_in, cfg.compute_dtype, sb);
  Tensor out;
  out.shape = a.shape;
  out.dtype = cfg.compute_dtype;
  out.data.resize(a.data.size());
  for (size_t i = 0; i < a.data.size(); ++i) {
    out.data[i] = conform(a.data[i] + b.data[i], cfg.compute_dtype);
  }
  return out;
}

Tensor embed(const Tensor& tok_table, const Tensor& pos_table,
             std::span<const int32_t> ids, int64_t batch, int64_t seq,
             const KernelConfig& cfg) {
  cfg.validate();
  check_2d(tok_table, "token table");
  check_2d(pos_table, "position table");
  if (tok_table.shape[1] != pos_table.shape[1]) {
    throw std::invalid_argument("embedding widths differ: " + shape_str(tok_table.shape) +
                                " vs " + shape_str(pos_table.shape));
  }
  if (static_cast<int64_t>(ids.size()) != batch * seq) {
    throw std::invalid_argument("expected " + std::to_string(batch * seq) +
                                " token ids, got " + std::to_string(ids.size()));
  }
  if (seq > pos_table.shape[0]) {
    throw std::out_of_range("sequence length " + std::to_string(seq) +
                            " exceeds position table extent " +
                            std::to_string(pos_table.shape[0]));
  }
  const int64_t h = tok_table.shape[1];
  const int64_t vocab = tok_table.shape[0];
  Tensor out({batch * seq, h}, cfg.compute_dtype);
  for (int64_t r = 0; r < batch * seq; ++r) {
    const int32_t id = ids[static_cast<size_t>(r)];
    if (id < 0 || id >= vocab) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(vocab));
    }
    const float* tok = tok_table.ptr() + static_cast<int64_t>(id) * h;
    const float* pos = pos_table.ptr() + (r % seq) * h;
    float* o = out.ptr() + r * h;
    for (int64_t c = 0; c < h; ++c) {
      const float t = conform(tok[c], cfg.compute_dtype);
      const float p = conform(pos[c], cfg.compute_dtype);
      o[c] = conform(t + p, cfg.compute_dtype);
    }
  }
  return out;
}

Tensor tanh_op(const Tensor& x_in, const KernelConfig& cfg) {
  cfg.validate();
  Tensor sx;
  const Tensor& x = on_lattice(x_in, cfg.compute_dtype, sx);
  Tensor out;
  out.shape = x.shape;
  out.dtype = cfg.compute_dtype;
  out.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) {
    out.data[i] = conform(std::tanh(x.data[i]), cfg.compute_dtype);
  }
  return out;
}

}  // namespace prlab
