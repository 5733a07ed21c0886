// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include "prlab/model.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace prlab {

namespace {

constexpr float kInitStddev = 0.02f;

// Deterministic N(0,1) draws: a fixed Box-Muller recipe over mt19937_64.
// (The standard library's normal_distribution is implementation-defined,
// which would make checkpoints differ across toolchains.)
class NormalSampler {
 public:
  explicit NormalSampler(uint64_t seed) : rng_(seed) {}

  float next(float stddev) {
    if (have_spare_) {
      have_spare_ = false;
      return static_cast<float>(spare_ * stddev);
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return static_cast<float>(r * std::cos(a) * stddev);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

size_t idx(OpClass c) { return static_cast<size_t>(c); }
size_t idx(Dtype d) { return static_cast<size_t>(d); }

double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs one kernel invocation, attributing its wall time and call count to
// the op class it belongs to.
template <typename Fn>
auto timed(ForwardTrace& trace, OpClass cls, const KernelConfig& cfg, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  auto result = fn();
  trace.seconds[idx(cls)] += elapsed_seconds(t0);
  trace.kernel_calls[idx(cls)][idx(cfg.compute_dtype)] += 1;
  return result;
}

// x [rows, in] * w [in, out] + b [out], all under the Linear config; the
// bias add is rounded on the compute lattice like any other elementwise op.
Tensor linear_bias(const Tensor& x, const Tensor& w, const Tensor& b,
                   const KernelConfig& cfg) {
  Tensor out = matmul(x, w, cfg);
  const int64_t n = out.shape[1];
  for (int64_t r = 0; r < out.shape[0]; ++r) {
    float* row = out.ptr() + r * n;
    for (int64_t c = 0; c < n; ++c) {
      row[c] = conform(row[c] + conform(b.data[static_cast<size_t>(c)], cfg.compute_dtype),
                       cfg.compute_dtype);
    }
  }
  return out;
}

// Gathers head `hd` of batch row `b` from a [batch*seq, hidden] activation
// into a [seq, head_dim] slice.
Tensor head_slice(const Tensor& x, int64_t b, int64_t seq, int64_t hd, int64_t head_dim) {
  Tensor s({seq, head_dim}, x.dtype);
  const int64_t hidden = x.shape[1];
  for (int64_t t = 0; t < seq; ++t) {
    const float* src = x.ptr() + (b * seq + t) * hidden + hd * head_dim;
    std::copy(src, src + head_dim, s.ptr() + t * head_dim);
  }
  return s;
}

}  // namespace

const char* archetype_name(Archetype a) {
  return a == Archetype::EncoderOnly ? "encoder_only" : "decoder_only";
}

Archetype archetype_from_name(const std::string& name) {
  if (name == "encoder_only") return Archetype::EncoderOnly;
  if (name == "decoder_only") return Archetype::DecoderOnly;
  throw std::invalid_argument("unknown archetype '" + name +
                              "' (expected encoder_only or decoder_only)");
}

void ModelConfig::validate() const {
  if (num_layers < 0) throw std::invalid_argument("num_layers must be >= 0");
  if (hidden < 1) throw std::invalid_argument("hidden must be >= 1");
  if (heads < 1) throw std::invalid_argument("heads must be >= 1");
  if (ffn < 1) throw std::invalid_argument("ffn must be >= 1");
  if (vocab < 1) throw std::invalid_argument("vocab must be >= 1");
  if (max_positions < 1) throw std::invalid_argument("max_positions must be >= 1");
  if (hidden % heads != 0) {
    throw std::invalid_argument("heads (" + std::to_string(heads) +
                                ") must divide hidden (" + std::to_string(hidden) + ")");
  }
  if (ffn < hidden) {
    throw std::invalid_argument("ffn (" + std::to_string(ffn) + ") must be >= hidden (" +
                                std::to_string(hidden) + ")");
  }
}

ModelConfig ModelConfig::bert_base() {
  return {Archetype::EncoderOnly, 12, 768, 12, 3072, 30522, 512, 0};
}

ModelConfig ModelConfig::gpt2_small() {
  return {Archetype::DecoderOnly, 12, 768, 12, 3072, 50257, 1024, 0};
}

ModelConfig ModelConfig::encoder_toy() {
  return {Archetype::EncoderOnly, 4, 128, 4, 256, 320, 160, 0};
}

ModelConfig ModelConfig::decoder_toy() {
  return {Archetype::DecoderOnly, 4, 128, 4, 256, 320, 160, 0};
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "bert_base") return bert_base();
  if (name == "gpt2_small") return gpt2_small();
  if (name == "encoder_toy") return encoder_toy();
  if (name == "decoder_toy") return decoder_toy();
  throw std::invalid_argument(
      "unknown model preset '" + name +
      "' (valid: bert_base, gpt2_small, encoder_toy, decoder_toy)");
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("preset")) c = ModelConfig::preset(j.at("preset").get<std::string>());
  if (j.contains("archetype")) {
    c.archetype = archetype_from_name(j.at("archetype").get<std::string>());
  }
  if (j.contains("num_layers")) c.num_layers = j.at("num_layers").get<int64_t>();
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<int64_t>();
  if (j.contains("heads")) c.heads = j.at("heads").get<int64_t>();
  if (j.contains("ffn")) c.ffn = j.at("ffn").get<int64_t>();
  if (j.contains("vocab")) c.vocab = j.at("vocab").get<int64_t>();
  if (j.contains("max_positions")) c.max_positions = j.at("max_positions").get<int64_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {
      {"archetype", archetype_name(c.archetype)},
      {"num_layers", c.num_layers},
      {"hidden", c.hidden},
      {"heads", c.heads},
      {"ffn", c.ffn},
      {"vocab", c.vocab},
      {"max_positions", c.max_positions},
      {"seed", c.seed},
  };
}

void Model::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("token_embedding", token_embedding);
  fn("position_embedding", position_embedding);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerParams& lp = layers[l];
    fn(p + "ln1.gamma", lp.ln1_gamma);
    fn(p + "ln1.beta", lp.ln1_beta);
    fn(p + "attn.wq", lp.wq);
    fn(p + "attn.bq", lp.bq);
    fn(p + "attn.wk", lp.wk);
    fn(p + "attn.bk", lp.bk);
    fn(p + "attn.wv", lp.wv);
    fn(p + "attn.bv", lp.bv);
    fn(p + "attn.wo", lp.wo);
    fn(p + "attn.bo", lp.bo);
    fn(p + "ln2.gamma", lp.ln2_gamma);
    fn(p + "ln2.beta", lp.ln2_beta);
    fn(p + "ffn.w1", lp.w1);
    fn(p + "ffn.b1", lp.b1);
    fn(p + "ffn.w2", lp.w2);
    fn(p + "ffn.b2", lp.b2);
  }
  fn("final_ln.gamma", final_ln_gamma);
  fn("final_ln.beta", final_ln_beta);
  if (config.archetype == Archetype::EncoderOnly) {
    fn("pooler.weight", pooler_w);
    fn("pooler.bias", pooler_b);
    fn("classifier.weight", cls_w);
    fn("classifier.bias", cls_b);
  }
}

void Model::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<Model*>(this)->for_each_param(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

Model build_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  const int64_t h = config.hidden, f = config.ffn;

  m.token_embedding = Tensor({config.vocab, h});
  m.position_embedding = Tensor({config.max_positions, h});
  m.layers.resize(static_cast<size_t>(config.num_layers));
  for (LayerParams& lp : m.layers) {
    lp.ln1_gamma = Tensor({h});
    lp.ln1_beta = Tensor({h});
    lp.wq = Tensor({h, h});
    lp.bq = Tensor({h});
    lp.wk = Tensor({h, h});
    lp.bk = Tensor({h});
    lp.wv = Tensor({h, h});
    lp.bv = Tensor({h});
    lp.wo = Tensor({h, h});
    lp.bo = Tensor({h});
    lp.ln2_gamma = Tensor({h});
    lp.ln2_beta = Tensor({h});
    lp.w1 = Tensor({h, f});
    lp.b1 = Tensor({f});
    lp.w2 = Tensor({f, h});
    lp.b2 = Tensor({h});
  }
  m.final_ln_gamma = Tensor({h});
  m.final_ln_beta = Tensor({h});
  if (config.archetype == Archetype::EncoderOnly) {
    m.pooler_w = Tensor({h, h});
    m.pooler_b = Tensor({h});
    m.cls_w = Tensor({h, 2});
    m.cls_b = Tensor({2});
  }

  // Fill in canonical order with a single sampler so the whole parameter
  // set is a pure function of the config.
  NormalSampler sampler(config.seed);
  m.for_each_param([&sampler](const std::string& name, Tensor& t) {
    if (t.rank() == 2) {
      for (float& v : t.data) v = sampler.next(kInitStddev);
    } else if (name.ends_with("gamma")) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    }
    // biases and norm shifts stay zero
  });
  return m;
}

uint64_t param_count(const ModelConfig& config) {
  config.validate();
  const auto h = static_cast<uint64_t>(config.hidden);
  const auto f = static_cast<uint64_t>(config.ffn);
  const uint64_t embeddings =
      static_cast<uint64_t>(config.vocab) * h + static_cast<uint64_t>(config.max_positions) * h;
  // Per layer: two norms (2h each), four h x h projections with biases,
  // and the two FFN matmuls with biases.
  const uint64_t per_layer = 4 * h + 4 * (h * h + h) + (h * f + f) + (f * h + h);
  uint64_t total = embeddings + static_cast<uint64_t>(config.num_layers) * per_layer + 2 * h;
  if (config.archetype == Archetype::EncoderOnly) {
    total += (h * h + h) + (2 * h + 2);  // pooler + 2-way head
  }
  return total;  // tied output projection adds nothing
}

TokenBatch random_tokens(int64_t vocab, int64_t batch, int64_t seq, uint64_t seed) {
  if (vocab < 1 || batch < 1 || seq < 1) {
    throw std::invalid_argument("random_tokens needs vocab, batch, seq >= 1");
  }
  TokenBatch t;
  t.batch = batch;
  t.seq = seq;
  t.ids.resize(static_cast<size_t>(batch * seq));
  std::mt19937_64 rng(seed);
  for (int32_t& id : t.ids) {
    id = static_cast<int32_t>(rng() % static_cast<uint64_t>(vocab));
  }
  return t;
}

std::vector<std::vector<int32_t>> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open token file: " + path);
  std::vector<std::vector<int32_t>> lines;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<int32_t> ids;
    std::string field;
    while (ls >> field) {
      try {
        size_t consumed = 0;
        const long long v = std::stoll(field, &consumed);
        if (consumed != field.size()) throw std::invalid_argument(field);
        if (v < std::numeric_limits<int32_t>::min() || v > std::numeric_limits<int32_t>::max()) {
          throw std::out_of_range(field);
        }
        ids.push_back(static_cast<int32_t>(v));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": not an integer token id: '" + field + "'");
      }
    }
    if (!ids.empty()) lines.push_back(std::move(ids));  // blank lines skipped
  }
  return lines;
}

TokenBatch token_batch_from_lines(const std::vector<std::vector<int32_t>>& lines) {
  if (lines.empty()) throw std::invalid_argument("token input holds no sequences");
  const size_t seq = lines.front().size();
  TokenBatch t;
  t.batch = static_cast<int64_t>(lines.size());
  t.seq = static_cast<int64_t>(seq);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].size() != seq) {
      throw std::invalid_argument("ragged token input: line 1 has " + std::to_string(seq) +
                                  " ids, line " + std::to_string(i + 1) + " has " +
                                  std::to_string(lines[i].size()));
    }
    t.ids.insert(t.ids.end(), lines[i].begin(), lines[i].end());
  }
  return t;
}

namespace {

// Shared trunk of forward() and classifier_probs(): embeddings, all
// transformer layers, final norm. Returns the [batch*seq, hidden] hidden
// states after the final norm.
Tensor forward_hidden(const Model& model, const TokenBatch& tokens,
                      const PrecisionPolicy& policy, bool retain_scores,
                      ForwardTrace& trace) {
  model.config.validate();
  policy.validate();
  if (tokens.batch < 1 || tokens.seq < 1) {
    throw std::invalid_argument("forward needs a non-empty token batch");
  }
  if (tokens.seq > model.config.max_positions) {
    throw std::invalid_argument("sequence length " + std::to_string(tokens.seq) +
                                " exceeds max_positions " +
                                std::to_string(model.config.max_positions));
  }
  const int64_t B = tokens.batch, S = tokens.seq;
  const int64_t H = model.config.heads, hd = model.config.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  const bool causal = model.config.archetype == Archetype::DecoderOnly;

  const KernelConfig& cfg_lin = policy.config_for(OpClass::Linear);
  const KernelConfig& cfg_att = policy.config_for(OpClass::AttentionScoreMatmul);
  const KernelConfig& cfg_sm = policy.config_for(OpClass::Softmax);
  const KernelConfig& cfg_ln = policy.config_for(OpClass::LayerNorm);
  const KernelConfig& cfg_act = policy.config_for(OpClass::Activation);
  const KernelConfig& cfg_emb = policy.config_for(OpClass::Embedding);
  const KernelConfig& cfg_res = policy.config_for(OpClass::Residual);

  Tensor x = timed(trace, OpClass::Embedding, cfg_emb, [&] {
    return embed(model.token_embedding, model.position_embedding, tokens.ids, B, S, cfg_emb);
  });

  for (size_t l = 0; l < model.layers.size(); ++l) {
    const LayerParams& lp = model.layers[l];

    Tensor normed = timed(trace, OpClass::LayerNorm, cfg_ln, [&] {
      return layernorm_lastdim(x, lp.ln1_gamma, lp.ln1_beta, 1e-5f, cfg_ln);
    });
    Tensor q = timed(trace, OpClass::Linear, cfg_lin,
                     [&] { return linear_bias(normed, lp.wq, lp.bq, cfg_lin); });
    Tensor k = timed(trace, OpClass::Linear, cfg_lin,
                     [&] { return linear_bias(normed, lp.wk, lp.bk, cfg_lin); });
    Tensor v = timed(trace, OpClass::Linear, cfg_lin,
                     [&] { return linear_bias(normed, lp.wv, lp.bv, cfg_lin); });

    Tensor scores_tap;
    if (retain_scores) scores_tap = Tensor({B, H, S, S});

    Tensor ctx({B * S, model.config.hidden}, cfg_att.compute_dtype);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t head = 0; head < H; ++head) {
        Tensor scores = timed(trace, OpClass::AttentionScoreMatmul, cfg_att, [&] {
          Tensor qh = head_slice(q, b, S, head, hd);
          Tensor kh = head_slice(k, b, S, head, hd);
          float* tap =
              retain_scores ? scores_tap.ptr() + ((b * H + head) * S * S) : nullptr;
          Tensor sc = attention_scores(qh, kh, scale, cfg_att, tap);
          if (causal) {
            // Additive mask after the profiling tap: future positions
            // get -inf, which both lattices represent exactly.
            for (int64_t i = 0; i < S; ++i) {
              for (int64_t j = i + 1; j < S; ++j) {
                sc.at2(i, j) = -std::numeric_limits<float>::infinity();
              }
            }
          }
          return sc;
        });
        Tensor probs = timed(trace, OpClass::Softmax, cfg_sm,
                             [&] { return softmax_lastdim(scores, cfg_sm); });
        Tensor vh = head_slice(v, b, S, head, hd);
        Tensor attended = timed(trace, OpClass::AttentionScoreMatmul, cfg_att,
                                [&] { return matmul(probs, vh, cfg_att); });
        for (int64_t t = 0; t < S; ++t) {
          std::copy(attended.ptr() + t * hd, attended.ptr() + (t + 1) * hd,
                    ctx.ptr() + (b * S + t) * model.config.hidden + head * hd);
        }
      }
    }
    if (retain_scores) trace.layer_scores.push_back(std::move(scores_tap));

    Tensor attn_out = timed(trace, OpClass::Linear, cfg_lin,
                            [&] { return linear_bias(ctx, lp.wo, lp.bo, cfg_lin); });
    x = timed(trace, OpClass::Residual, cfg_res, [&] { return add(x, attn_out, cfg_res); });

    Tensor normed2 = timed(trace, OpClass::LayerNorm, cfg_ln, [&] {
      return layernorm_lastdim(x, lp.ln2_gamma, lp.ln2_beta, 1e-5f, cfg_ln);
    });
    Tensor ff1 = timed(trace, OpClass::Linear, cfg_lin,
                       [&] { return linear_bias(normed2, lp.w1, lp.b1, cfg_lin); });
    Tensor act = timed(trace, OpClass::Activation, cfg_act,
                       [&] { return gelu(ff1, cfg_act); });
    Tensor ff2 = timed(trace, OpClass::Linear, cfg_lin,
                       [&] { return linear_bias(act, lp.w2, lp.b2, cfg_lin); });
    x = timed(trace, OpClass::Residual, cfg_res, [&] { return add(x, ff2, cfg_res); });
  }

  // A zero-layer model is an embedding table lookup and nothing else: the
  // final norm parameters exist but are never applied.
  if (model.layers.empty()) return x;

  return timed(trace, OpClass::LayerNorm, cfg_ln, [&] {
    return layernorm_lastdim(x, model.final_ln_gamma, model.final_ln_beta, 1e-5f, cfg_ln);
  });
}

}  // namespace

ForwardTrace forward(const Model& model, const TokenBatch& tokens,
                     const PrecisionPolicy& policy, bool retain_scores) {
  ForwardTrace trace;
  Tensor hidden = forward_hidden(model, tokens, policy, retain_scores, trace);

  if (model.layers.empty()) {
    // Degenerate embeddings-only model: no tied head, the embeddings are
    // the output.
    hidden.shape = {tokens.batch, tokens.seq, model.config.hidden};
    trace.logits = std::move(hidden);
    return trace;
  }

  const KernelConfig& cfg_lin = policy.config_for(OpClass::Linear);
  trace.logits = timed(trace, OpClass::Linear, cfg_lin, [&] {
    // Tied output projection: logits = hidden x E^T.
    const Tensor& emb = model.token_embedding;
    Tensor et({emb.shape[1], emb.shape[0]});
    for (int64_t r = 0; r < emb.shape[0]; ++r) {
      for (int64_t c = 0; c < emb.shape[1]; ++c) et.at2(c, r) = emb.at2(r, c);
    }
    Tensor logits = matmul(hidden, et, cfg_lin);
    logits.shape = {tokens.batch, tokens.seq, model.config.vocab};
    return logits;
  });
  return trace;
}

std::vector<float> classifier_probs(const Model& model, const TokenBatch& tokens,
                                    const PrecisionPolicy& policy) {
  if (model.config.archetype != Archetype::EncoderOnly) {
    throw std::invalid_argument("classifier_probs needs an encoder_only model");
  }
  ForwardTrace trace;
  Tensor hidden = forward_hidden(model, tokens, policy, false, trace);

  const KernelConfig& cfg_lin = policy.config_for(OpClass::Linear);
  const KernelConfig& cfg_act = policy.config_for(OpClass::Activation);
  const KernelConfig& cfg_sm = policy.config_for(OpClass::Softmax);
  const int64_t B = tokens.batch, S = tokens.seq, h = model.config.hidden;

  // Mean-pool the final hidden states; the reduction follows the Linear
  // class accumulation contract.
  Tensor pooled = timed(trace, OpClass::Linear, cfg_lin, [&] {
    Tensor p({B, h}, cfg_lin.compute_dtype);
    const bool narrow = cfg_lin.accum_dtype == Dtype::F16E;
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t c = 0; c < h; ++c) {
        float acc = 0.0f;
        for (int64_t t = 0; t < S; ++t) {
          const float xv = conform(hidden.at2(b * S + t, c), cfg_lin.compute_dtype);
          acc = narrow ? round16(acc + xv) : acc + xv;
        }
        p.at2(b, c) = conform(acc / static_cast<float>(S), cfg_lin.compute_dtype);
      }
    }
    return p;
  });

  Tensor pre = timed(trace, OpClass::Linear, cfg_lin,
                     [&] { return linear_bias(pooled, model.pooler_w, model.pooler_b, cfg_lin); });
  Tensor act = timed(trace, OpClass::Activation, cfg_act, [&] { return tanh_op(pre, cfg_act); });
  Tensor logits = timed(trace, OpClass::Linear, cfg_lin,
                        [&] { return linear_bias(act, model.cls_w, model.cls_b, cfg_lin); });
  Tensor probs = timed(trace, OpClass::Softmax, cfg_sm,
                       [&] { return softmax_lastdim(logits, cfg_sm); });

  std::vector<float> positive(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) positive[static_cast<size_t>(b)] = probs.at2(b, 1);
  return positive;
}

FlopBreakdown flop_count(const ModelConfig& config, int64_t batch, int64_t seq) {
  config.validate();
  if (batch < 1 || seq < 1) throw std::invalid_argument("flop_count needs batch, seq >= 1");
  const auto b = static_cast<uint64_t>(batch);
  const auto s = static_cast<uint64_t>(seq);
  const auto h = static_cast<uint64_t>(config.hidden);
  const auto f = static_cast<uint64_t>(config.ffn);
  const auto L = static_cast<uint64_t>(config.num_layers);
  FlopBreakdown fb;
  fb.linear = L * 2 * (4 * h * h + 2 * h * f) * s * b;
  fb.attention = L * 4 * s * s * h * b;
  // A zero-layer model runs the embedding lookup only: no tied head.
  fb.output_projection =
      L > 0 ? 2 * s * h * static_cast<uint64_t>(config.vocab) * b : 0;
  return fb;
}

}  // namespace prlab
