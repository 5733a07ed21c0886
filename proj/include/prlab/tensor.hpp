// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prlab/float16.hpp"

namespace prlab {

// Storage dtypes. F16E is emulated binary16: fp32 storage whose values all
// lie on the binary16 lattice (see float16.hpp). The width is the dtype's
// serialized footprint, not its in-memory footprint.
enum class Dtype : uint8_t { F32 = 0, F16E = 1 };

constexpr size_t dtype_width(Dtype d) { return d == Dtype::F32 ? 4 : 2; }

const char* dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& name);  // throws on unknown names

// Round v onto the lattice of the given dtype (identity for F32).
inline float conform(float v, Dtype d) {
  return d == Dtype::F16E ? round16(v) : v;
}

// Dense row-major tensor of fp32 values plus a dtype tag. When the tag is
// F16E every element is a binary16 lattice value; constructors and cast()
// enforce that, and the kernels preserve it.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;
  Dtype dtype = Dtype::F32;

  Tensor() = default;
  Tensor(std::vector<int64_t> shape, Dtype dtype = Dtype::F32);  // zero-filled
  static Tensor from(std::vector<int64_t> shape, std::vector<float> values,
                     Dtype dtype = Dtype::F32);

  int64_t numel() const;
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  // 2-D accessors for [rows, cols] tensors (bounds unchecked).
  float& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
  float at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }
};

// Number of elements implied by a shape; throws on negative extents.
int64_t shape_numel(std::span<const int64_t> shape);

// "[2, 3, 5]" -- used in error messages.
std::string shape_str(std::span<const int64_t> shape);

// Re-tag a tensor, rounding values onto the target lattice when narrowing
// to F16E. Widening F16E -> F32 keeps values bit-identical (every binary16
// value is exact in fp32).
Tensor cast(const Tensor& x, Dtype target);

}  // namespace prlab
