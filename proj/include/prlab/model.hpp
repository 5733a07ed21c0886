// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prlab/policy.hpp"
#include "prlab/tensor.hpp"

namespace prlab {

enum class Archetype : uint8_t { EncoderOnly = 0, DecoderOnly = 1 };

const char* archetype_name(Archetype a);
Archetype archetype_from_name(const std::string& name);

struct ModelConfig {
  Archetype archetype = Archetype::DecoderOnly;
  int64_t num_layers = 0;
  int64_t hidden = 0;
  int64_t heads = 0;
  int64_t ffn = 0;
  int64_t vocab = 0;
  int64_t max_positions = 0;
  uint64_t seed = 0;

  int64_t head_dim() const { return hidden / heads; }

  // Throws std::invalid_argument naming the violated constraint:
  // num_layers >= 0 (zero layers is a legal embeddings-only model), all
  // other extents >= 1, heads dividing hidden, ffn >= hidden.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;

  // Reference configurations. The encoder preset matches a 12-layer,
  // 768-hidden, 12-head encoder with a pooled 2-way classification head;
  // the decoder preset matches a 12-layer, 768-hidden, 12-head decoder
  // with a 50257-token vocabulary and tied output projection.
  static ModelConfig bert_base();
  static ModelConfig gpt2_small();
  // Toy sizes for desk experiments and tests.
  static ModelConfig encoder_toy();
  static ModelConfig decoder_toy();
  // Lookup by name ("bert_base", "gpt2_small", "encoder_toy",
  // "decoder_toy"); throws listing valid names.
  static ModelConfig preset(const std::string& name);
};

ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ModelConfig& c);

struct LayerParams {
  Tensor ln1_gamma, ln1_beta;          // pre-attention norm
  Tensor wq, bq, wk, bk, wv, bv;       // [hidden, hidden], [hidden]
  Tensor wo, bo;                       // attention output projection
  Tensor ln2_gamma, ln2_beta;          // pre-FFN norm
  Tensor w1, b1;                       // [hidden, ffn], [ffn]
  Tensor w2, b2;                       // [ffn, hidden], [hidden]
};

// A pre-norm transformer. The output projection is tied to the token
// embedding for both archetypes; the encoder additionally carries a
// tanh pooler and a 2-way classification head over the first token.
struct Model {
  ModelConfig config;
  Tensor token_embedding;      // [vocab, hidden]
  Tensor position_embedding;   // [max_positions, hidden]
  std::vector<LayerParams> layers;
  Tensor final_ln_gamma, final_ln_beta;
  Tensor pooler_w, pooler_b;   // encoder only: [hidden, hidden], [hidden]
  Tensor cls_w, cls_b;         // encoder only: [hidden, 2], [2]

  // Visits every parameter tensor in the canonical order used for
  // initialization, serialization and parameter counting.
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_param(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

// Deterministic seeded construction: weights are N(0, 0.02) draws from a
// fixed generator recipe, biases and norm shifts zero, norm scales one.
// The same config (seed included) always builds bit-identical parameters.
Model build_model(const ModelConfig& config);

// Closed-form parameter count for the config (tied output projection, so
// logits add no parameters; encoder configs include pooler + 2-way head).
uint64_t param_count(const ModelConfig& config);

// A rectangular batch of token ids.
struct TokenBatch {
  int64_t batch = 0;
  int64_t seq = 0;
  std::vector<int32_t> ids;  // batch*seq, row-major
};

// Uniform random ids in [0, vocab), deterministic in the seed.
TokenBatch random_tokens(int64_t vocab, int64_t batch, int64_t seq, uint64_t seed);

// Reads newline-delimited lines of space-separated integer ids.
// Throws std::runtime_error on unreadable files or non-integer fields.
std::vector<std::vector<int32_t>> read_token_lines(const std::string& path);

// Assembles equal-length lines into a batch; ragged lines are an error.
TokenBatch token_batch_from_lines(const std::vector<std::vector<int32_t>>& lines);

// Per-forward instrumentation: wall seconds and kernel invocation counts
// per op class, split by compute dtype (index 0 = F32, 1 = F16E).
struct ForwardTrace {
  Tensor logits;                        // [batch, seq, vocab]; a zero-layer
                                        // model yields [batch, seq, hidden]
  std::vector<Tensor> layer_scores;     // per layer [batch, heads, seq, seq]
                                        // fp32 pre-mask scores, when retained
  std::array<double, kNumOpClasses> seconds{};
  std::array<std::array<uint64_t, 2>, kNumOpClasses> kernel_calls{};

  uint64_t calls(OpClass c, Dtype d) const {
    return kernel_calls[static_cast<size_t>(c)][static_cast<size_t>(d)];
  }
  double class_seconds(OpClass c) const { return seconds[static_cast<size_t>(c)]; }
};

// Full forward pass under the given precision policy. Decoder archetypes
// apply an additive -inf causal mask after the (optional) score capture;
// encoders attend bidirectionally. With retain_scores the fp32-accumulated
// scaled scores of every layer are kept for profiling. A zero-layer model
// degenerates to the embedding lookup: no blocks, no final norm, no tied
// head — logits are the [batch, seq, hidden] embedding output.
ForwardTrace forward(const Model& model, const TokenBatch& tokens,
                     const PrecisionPolicy& policy, bool retain_scores = false);

// Encoder classification head: mean-pools the final hidden states, applies
// the tanh pooler and the 2-way head, and returns the positive-class
// probability per batch row. Throws on decoder models.
std::vector<float> classifier_probs(const Model& model, const TokenBatch& tokens,
                                    const PrecisionPolicy& policy);

// Forward-pass FLOP accounting (multiply-add = 2 FLOPs), exact integers:
//   linear    = L * 2*(4*h^2 + 2*h*ffn) * s * b
//   attention = L * 4*s^2*h * b
//   output    = 2*s*h*vocab * b   (zero when L = 0: no tied head)
struct FlopBreakdown {
  uint64_t linear = 0;
  uint64_t attention = 0;
  uint64_t output_projection = 0;
  uint64_t total() const { return linear + attention + output_projection; }
};

FlopBreakdown flop_count(const ModelConfig& config, int64_t batch, int64_t seq);

}  // namespace prlab
