// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "prlab/model.hpp"
#include "prlab/policy.hpp"

using namespace prlab;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    static int counter = 0;
    path = "/tmp/prlab_tokens_" + std::to_string(getpid()) + "_" +
           std::to_string(counter++) + ".txt";
    std::ofstream(path) << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("preset parameter counts hit the published totals") {
  CHECK(param_count(ModelConfig::bert_base()) == 109'482'242ULL);
  CHECK(param_count(ModelConfig::gpt2_small()) == 124'439'808ULL);
}

TEST_CASE("parameter enumeration agrees with the closed-form count") {
  for (const ModelConfig& cfg : {ModelConfig::encoder_toy(), ModelConfig::decoder_toy()}) {
    Model model = build_model(cfg);
    uint64_t counted = 0;
    std::vector<std::string> names;
    model.for_each_param([&](const std::string& name, Tensor& t) {
      counted += static_cast<uint64_t>(t.numel());
      names.push_back(name);
    });
    CHECK(counted == param_count(cfg));
    // Canonical order: embeddings first, layers in index order, final norm,
    // then the classification head on encoders only.
    REQUIRE(names.size() >= 4);
    CHECK(names.front() == "token_embedding");
    CHECK(names[1] == "position_embedding");
    CHECK(names[2] == "layers.0.ln1.gamma");
    if (cfg.archetype == Archetype::EncoderOnly) {
      CHECK(names.back() == "classifier.bias");
    } else {
      CHECK(names.back() == "final_ln.beta");
    }
    CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
  }
}

TEST_CASE("initialization is deterministic in the seed and profile-correct") {
  ModelConfig cfg = ModelConfig::decoder_toy();
  cfg.seed = 7;
  Model a = build_model(cfg);
  Model b = build_model(cfg);
  cfg.seed = 8;
  Model c = build_model(cfg);

  bool any_diff = false;
  a.for_each_param([&](const std::string& name, Tensor& ta) {
    b.for_each_param([&](const std::string& nb, Tensor& tb) {
      if (nb != name) return;
      CHECK(ta.data == tb.data);
    });
    c.for_each_param([&](const std::string& nc, Tensor& tc) {
      if (nc != name || ta.data.empty()) return;
      if (ta.data != tc.data) any_diff = true;
    });
  });
  CHECK(any_diff);

  // Norm scales start at one, biases and shifts at zero, matrices near
  // N(0, 0.02).
  a.for_each_param([&](const std::string& name, Tensor& t) {
    if (name.ends_with("gamma")) {
      for (float v : t.data) CHECK(v == 1.0f);
    } else if (t.rank() == 2) {
      double sumsq = 0.0;
      for (float v : t.data) sumsq += static_cast<double>(v) * v;
      const double std_dev = std::sqrt(sumsq / static_cast<double>(t.numel()));
      if (t.numel() >= 10'000) {
        CAPTURE(name);
        CHECK(std_dev > 0.015);
        CHECK(std_dev < 0.025);
      }
    } else {
      for (float v : t.data) CHECK(v == 0.0f);
    }
  });
}

TEST_CASE("flop counts match a hand-computed single-layer example") {
  ModelConfig cfg;
  cfg.archetype = Archetype::DecoderOnly;
  cfg.num_layers = 1;
  cfg.hidden = 2;
  cfg.heads = 1;
  cfg.ffn = 4;
  cfg.vocab = 7;
  cfg.max_positions = 8;
  const FlopBreakdown fb = flop_count(cfg, 1, 2);
  // Projections: 2*(4*h^2 + 2*h*f)*s = 2*(16 + 16)*2 = 128.
  CHECK(fb.linear == 128);
  // Scores + weighted values: 4*s^2*h = 4*4*2 = 32.
  CHECK(fb.attention == 32);
  // Tied output projection: 2*s*h*v = 2*2*2*7 = 56.
  CHECK(fb.output_projection == 56);
  CHECK(fb.total() == 216);

  // Linear term scales with batch and sequence; attention with seq^2.
  const FlopBreakdown b4 = flop_count(cfg, 4, 2);
  CHECK(b4.linear == 4 * fb.linear);
  CHECK(b4.attention == 4 * fb.attention);
}

TEST_CASE("attention work grows exactly quadratically in sequence length") {
  const ModelConfig cfg = ModelConfig::gpt2_small();
  const FlopBreakdown s128 = flop_count(cfg, 1, 128);
  const FlopBreakdown s512 = flop_count(cfg, 1, 512);
  CHECK(s512.attention == 16 * s128.attention);
  CHECK(s512.linear == 4 * s128.linear);
}

TEST_CASE("token sampling stays in range and is seed-deterministic") {
  const TokenBatch t1 = random_tokens(320, 2, 16, 5);
  const TokenBatch t2 = random_tokens(320, 2, 16, 5);
  const TokenBatch t3 = random_tokens(320, 2, 16, 6);
  CHECK(t1.ids == t2.ids);
  CHECK(t1.ids != t3.ids);
  CHECK(t1.ids.size() == 32);
  for (int32_t id : t1.ids) {
    CHECK(id >= 0);
    CHECK(id < 320);
  }
}

TEST_CASE("token files parse line-wise with precise errors") {
  const TempFile good("1 2 3\n\n4 5\n");
  const auto lines = read_token_lines(good.path);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == std::vector<int32_t>{1, 2, 3});
  CHECK(lines[1] == std::vector<int32_t>{4, 5});

  const TempFile bad("1 2\n3 x\n");
  CHECK_THROWS_WITH_AS(read_token_lines(bad.path), doctest::Contains("not an integer"),
                       std::runtime_error);
  const TempFile huge("1\n3000000000\n");
  CHECK_THROWS_AS(read_token_lines(huge.path), std::runtime_error);

  CHECK_THROWS_AS(token_batch_from_lines({{1, 2}, {3}}), std::invalid_argument);
  const TokenBatch tb = token_batch_from_lines({{1, 2}, {3, 4}});
  CHECK(tb.batch == 2);
  CHECK(tb.seq == 2);
}

TEST_CASE("decoder logits ignore future tokens; encoder logits do not") {
  ModelConfig cfg = ModelConfig::decoder_toy();
  cfg.num_layers = 2;  // keep it quick
  const Model decoder = build_model(cfg);
  const PrecisionPolicy fp32 = resolve_policy("fp32");

  TokenBatch a = random_tokens(cfg.vocab, 1, 8, 1);
  TokenBatch b = a;
  b.ids[7] = (b.ids[7] + 1) % static_cast<int32_t>(cfg.vocab);
  const Tensor la = forward(decoder, a, fp32).logits;
  const Tensor lb = forward(decoder, b, fp32).logits;
  // Positions before the edit see identical prefixes under the causal mask.
  for (int64_t p = 0; p < 7; ++p) {
    for (int64_t v = 0; v < cfg.vocab; ++v) {
      REQUIRE(la.data[static_cast<size_t>(p * cfg.vocab + v)] ==
              lb.data[static_cast<size_t>(p * cfg.vocab + v)]);
    }
  }

  ModelConfig ecfg = ModelConfig::encoder_toy();
  ecfg.num_layers = 2;
  const Model encoder = build_model(ecfg);
  TokenBatch ea = random_tokens(ecfg.vocab, 1, 8, 2);
  TokenBatch eb = ea;
  eb.ids[7] = (eb.ids[7] + 1) % static_cast<int32_t>(ecfg.vocab);
  const Tensor ela = forward(encoder, ea, fp32).logits;
  const Tensor elb = forward(encoder, eb, fp32).logits;
  bool position0_changed = false;
  for (int64_t v = 0; v < ecfg.vocab; ++v) {
    if (ela.data[static_cast<size_t>(v)] != elb.data[static_cast<size_t>(v)]) {
      position0_changed = true;
    }
  }
  CHECK(position0_changed);  // bidirectional attention sees the edit
}

TEST_CASE("classification head yields probabilities on encoders only") {
  const ModelConfig cfg = ModelConfig::encoder_toy();
  const Model model = build_model(cfg);
  const TokenBatch tokens = random_tokens(cfg.vocab, 3, 8, 4);
  const std::vector<float> probs =
      classifier_probs(model, tokens, resolve_policy("fp32"));
  REQUIRE(probs.size() == 3);
  for (float p : probs) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
  const Model decoder = build_model(ModelConfig::decoder_toy());
  CHECK_THROWS_AS(classifier_probs(decoder, random_tokens(320, 1, 8, 4),
                                   resolve_policy("fp32")),
                  std::invalid_argument);
}

TEST_CASE("model config json carries every field") {
  ModelConfig cfg = ModelConfig::encoder_toy();
  cfg.seed = 123;
  const ModelConfig back = config_from_json(config_to_json(cfg));
  CHECK(back == cfg);
  CHECK_THROWS_AS(ModelConfig::preset("bert_huge"), std::invalid_argument);
}

TEST_CASE("config validation names the broken constraint") {
  ModelConfig cfg = ModelConfig::decoder_toy();
  cfg.heads = 3;  // does not divide hidden=128
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("heads"), std::invalid_argument);
  cfg = ModelConfig::decoder_toy();
  cfg.ffn = 64;  // below hidden
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig::decoder_toy();
  cfg.num_layers = 0;  // legal: embeddings-only model
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("a zero-layer model is exactly the embedding lookup") {
  ModelConfig cfg = ModelConfig::decoder_toy();
  cfg.num_layers = 0;
  const Model model = build_model(cfg);
  const TokenBatch tokens = random_tokens(cfg.vocab, 2, 5, 7);
  const ForwardTrace trace = forward(model, tokens, resolve_policy("fp32"));

  // No blocks, no final norm, no tied head: the output is the raw
  // token+position embedding, shaped [batch, seq, hidden].
  REQUIRE(trace.logits.shape == std::vector<int64_t>({2, 5, cfg.hidden}));
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t s = 0; s < 5; ++s) {
      const int32_t id = tokens.ids[static_cast<size_t>(b * 5 + s)];
      for (int64_t d = 0; d < cfg.hidden; ++d) {
        const float expect = model.token_embedding.at2(id, d) +
                             model.position_embedding.at2(s, d);
        CHECK(trace.logits.data[static_cast<size_t>((b * 5 + s) * cfg.hidden + d)] ==
              expect);
      }
    }
  }
  CHECK(trace.calls(OpClass::Linear, Dtype::F32) == 0);
  CHECK(trace.calls(OpClass::LayerNorm, Dtype::F32) == 0);

  // The flop ledger agrees: nothing besides the lookup.
  const FlopBreakdown fb = flop_count(cfg, 2, 5);
  CHECK(fb.linear == 0);
  CHECK(fb.attention == 0);
  CHECK(fb.output_projection == 0);
}
