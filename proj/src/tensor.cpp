// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace prlab {

const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "f32" : "f16e"; }

Dtype dtype_from_name(const std::string& name) {
  if (name == "f32") return Dtype::F32;
  if (name == "f16e") return Dtype::F16E;
  throw std::invalid_argument("unknown dtype '" + name + "' (expected f32 or f16e)");
}

int64_t shape_numel(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(std::span<const int64_t> shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape_, Dtype dtype_) : shape(std::move(shape_)), dtype(dtype_) {
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<float> values, Dtype dtype) {
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("shape " + shape_str(shape) + " wants " + std::to_string(n) +
                                " values, got " + std::to_string(values.size()));
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  t.dtype = dtype;
  if (dtype == Dtype::F16E) {
    for (float& v : t.data) v = round16(v);
  }
  return t;
}

int64_t Tensor::numel() const { return shape_numel(shape); }

Tensor cast(const Tensor& x, Dtype target) {
  Tensor out = x;
  out.dtype = target;
  if (target == Dtype::F16E && x.dtype == Dtype::F32) {
    for (float& v : out.data) v = round16(v);
  }
  return out;
}

}  // namespace prlab
