// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace prlab {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("checkpoint truncated while reading " + what);
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& in, const std::string& what) {
  const uint64_t lo = get_u32(in, what);
  const uint64_t hi = get_u32(in, what);
  return lo | (hi << 32);
}

uint64_t tensor_record_bytes(const std::string& name, const Tensor& t, Dtype dtype) {
  return 4 + name.size() + 1 + 4 + 8 * t.rank() +
         static_cast<uint64_t>(t.numel()) * dtype_width(dtype);
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t, Dtype dtype) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  out.put(static_cast<char>(dtype));
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int64_t e : t.shape) put_u64(out, static_cast<uint64_t>(e));
  if (dtype == Dtype::F32) {
    for (float v : t.data) put_u32(out, std::bit_cast<uint32_t>(v));
  } else {
    for (float v : t.data) {
      const uint16_t h = f16_encode(v);
      const unsigned char b[2] = {static_cast<unsigned char>(h),
                                  static_cast<unsigned char>(h >> 8)};
      out.write(reinterpret_cast<const char*>(b), 2);
    }
  }
}

Tensor read_tensor(std::istream& in, const std::string& expected_name) {
  const uint32_t name_len = get_u32(in, "tensor name length");
  std::string name(name_len, '\0');
  if (!in.read(name.data(), name_len)) {
    throw std::runtime_error("checkpoint truncated while reading tensor name");
  }
  if (name != expected_name) {
    throw std::runtime_error("unexpected tensor '" + name + "' (wanted '" + expected_name +
                             "')");
  }
  const int tag = in.get();
  if (tag != 0 && tag != 1) {
    throw std::runtime_error("tensor '" + name + "' has unknown dtype tag " +
                             std::to_string(tag));
  }
  const auto dtype = static_cast<Dtype>(tag);
  const uint32_t rank = get_u32(in, "tensor rank");
  std::vector<int64_t> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int64_t>(get_u64(in, "tensor extent"));
  }
  Tensor t(shape, dtype);
  if (dtype == Dtype::F32) {
    for (float& v : t.data) v = std::bit_cast<float>(get_u32(in, "tensor payload"));
  } else {
    for (float& v : t.data) {
      unsigned char b[2];
      if (!in.read(reinterpret_cast<char*>(b), 2)) {
        throw std::runtime_error("checkpoint truncated while reading tensor payload");
      }
      v = f16_decode(static_cast<uint16_t>(b[0]) | (static_cast<uint16_t>(b[1]) << 8));
    }
  }
  return t;
}

}  // namespace

uint64_t serialize_checkpoint(const Model& model, Dtype dtype, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);

  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  const std::string cfg = config_to_json(model.config).dump();
  put_u32(out, static_cast<uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  uint64_t bytes = sizeof(kCheckpointMagic) + 4 + 4 + cfg.size();
  model.for_each_param([&](const std::string& name, const Tensor& t) {
    write_tensor(out, name, t, dtype);
    bytes += tensor_record_bytes(name, t, dtype);
  });
  out.flush();
  if (!out) throw std::runtime_error("write failure on checkpoint: " + path);
  return bytes;
}

uint64_t checkpoint_payload_bytes(const Model& model, Dtype dtype) {
  uint64_t bytes = 0;
  model.for_each_param([&](const std::string&, const Tensor& t) {
    bytes += static_cast<uint64_t>(t.numel()) * dtype_width(dtype);
  });
  return bytes;
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint (bad magic): " + path);
  }
  const uint32_t version = get_u32(in, "format version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const uint32_t cfg_len = get_u32(in, "config length");
  std::string cfg(cfg_len, '\0');
  if (!in.read(cfg.data(), cfg_len)) {
    throw std::runtime_error("checkpoint truncated while reading config");
  }

  Model skeleton = build_model(config_from_json(nlohmann::json::parse(cfg)));
  // Overwrite the freshly initialized parameters with the stored records,
  // enforcing the canonical order and shapes.
  skeleton.for_each_param([&](const std::string& name, Tensor& t) {
    Tensor stored = read_tensor(in, name);
    if (stored.shape != t.shape) {
      throw std::runtime_error("tensor '" + name + "' has shape " + shape_str(stored.shape) +
                               ", expected " + shape_str(t.shape));
    }
    t = std::move(stored);
  });
  return skeleton;
}

bool parity_pass(double max_abs_error) { return max_abs_error < kParityTolerance; }

ParityReport parity_from_logits(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw std::invalid_argument("logit shapes differ: " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  }
  ParityReport r;
  double sum = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    if (d > r.max_abs_error) r.max_abs_error = d;
    sum += d;
    ++r.compared;
  }
  r.mean_abs_error = r.compared ? sum / static_cast<double>(r.compared) : 0.0;
  r.pass = parity_pass(r.max_abs_error);
  return r;
}

ParityReport verify_parity(const Model& a, const Model& b, const TokenBatch& probe,
                           const PrecisionPolicy& policy) {
  if (!(a.config == b.config)) {
    throw std::invalid_argument("parity check needs identical model configs");
  }
  const ForwardTrace ta = forward(a, probe, policy);
  const ForwardTrace tb = forward(b, probe, policy);
  return parity_from_logits(ta.logits, tb.logits);
}

}  // namespace prlab
