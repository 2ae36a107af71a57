/*
 * Copyright 2026 The fltune Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <cmath>
#include <vector>

#include "fltune/autograd.hpp"
#include "fltune/encoder.hpp"
#include "fltune/gradcheck.hpp"
#include "fltune/model.hpp"
#include "fltune/params.hpp"
#include "test_util.hpp"

using namespace fltune;
using fltune::testing::random_tokens;
using fltune::testing::tiny_config;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

Matrix mm(const Matrix& a, const Tensor& b) {
  Matrix out(a.size(), std::vector<double>(b.cols(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < b.rows(); ++k) out[i][j] += a[i][k] * b.at(k, j);
  return out;
}

void add_bias(Matrix& a, const Tensor& b) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b.at(0, j);
}

Matrix norm(const Matrix& a, const Matrix& residual, const LayerNormParams& p, double eps) {
  Matrix out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t n = a[i].size();
    std::vector<double> v(n);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += v[j] = a[i][j] + residual[i][j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      out[i][j] = (v[j] - mean) / std::sqrt(var + eps) * p.gain.at(0, j) + p.bias.at(0, j);
    }
  }
  return out;
}

Matrix reference_attention(const AttentionLayer& layer, const Matrix& x) {
  const std::size_t n = x.size();
  Matrix joined(n);
  for (std::size_t h = 0; h < layer.num_heads(); ++h) {
    const Matrix q = mm(x, layer.w_query[h]), k = mm(x, layer.w_key[h]), v = mm(x, layer.w_value[h]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.w_query[h].cols()));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < q[i].size(); ++c) dot += q[i][c] * k[j][c];
        s[j] = dot * scale;
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += e = std::exp(e - mx);
      for (std::size_t c = 0; c < v[0].size(); ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v[j][c];
        joined[i].push_back(acc);
      }
    }
  }
  Matrix out = mm(joined, layer.w_output);
  add_bias(out, layer.b_output);
  return out;
}

Matrix reference_ffn(const FFNLayer& f, const Matrix& x) {
  Matrix h = mm(x, f.w_in);
  add_bias(h, f.b_in);
  for (auto& row : h)
    for (double& v : row) v = std::max(0.0, v);
  Matrix out = mm(h, f.w_out);
  add_bias(out, f.b_out);
  return out;
}

/// Independent post-norm (or pre-norm) encoder, pooled logits.
std::vector<double> reference_logits(const EncoderWeights& w, const std::vector<int>& tokens, bool post_norm) {
  Matrix x;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<double> row(w.config.model_dim);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = w.token_embedding.at(static_cast<std::size_t>(tokens[i]), j) + w.position_embedding.at(i, j);
    }
    x.push_back(row);
  }
  const Matrix zero(x.size(), std::vector<double>(w.config.model_dim, 0.0));
  for (const auto& b : w.blocks) {
    const double eps = w.config.layer_norm_eps;
    if (post_norm) {
      x = norm(reference_attention(b.attention, x), x, b.attention_norm, eps);
      x = norm(reference_ffn(b.ffn, x), x, b.ffn_norm, eps);
    } else {
      Matrix a = reference_attention(b.attention, norm(x, zero, b.attention_norm, eps));
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += a[i][j];
      Matrix f = reference_ffn(b.ffn, norm(x, zero, b.ffn_norm, eps));
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += f[i][j];
    }
  }
  Matrix pooled{x[0]};
  Matrix logits = mm(pooled, w.head_weight);
  add_bias(logits, w.head_bias);
  return logits[0];
}

/// Randomizes every backbone tensor at a scale where layer choices matter.
void randomize(EncoderWeights& w, std::uint64_t seed) {
  Rng rng(seed);
  Model m{w, {}};
  for (auto& e : register_parameters(m).entries()) {
    Tensor t = e.tensor;
    for (double& v : t.mutable_data()) v = rng.uniform(-0.5, 0.5);
    t.set_requires_grad(false);
  }
  for (auto& b : w.blocks) {
    for (double& g : b.attention_norm.gain.mutable_data()) g += 1.0;
    for (double& g : b.ffn_norm.gain.mutable_data()) g += 1.0;
  }
}

}  // namespace

TEST_CASE("ffn_forward hand-computed cases") {
  SUBCASE("zero weights give the output bias on every row") {
    FFNLayer f{Tensor(3, 5), Tensor(1, 5), Tensor(5, 3), Tensor::from_rows({{1, -2, 3}})};
    const Tensor y = ffn_forward(f, Tensor(4, 3, 7.0));
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(y.at(i, 0) == 1.0);
      CHECK(y.at(i, 1) == -2.0);
      CHECK(y.at(i, 2) == 3.0);
    }
  }
  SUBCASE("1x1 scalar case") {
    FFNLayer f{Tensor::scalar(1), Tensor::scalar(0), Tensor::scalar(3), Tensor::scalar(1)};
    CHECK(ffn_forward(f, Tensor::scalar(2)).item() == 7.0);
  }
  SUBCASE("width mismatch") {
    FFNLayer f{Tensor(3, 5), Tensor(1, 5), Tensor(5, 3), Tensor(1, 3)};
    CHECK_THROWS_AS(ffn_forward(f, Tensor(2, 4)), DimensionError);
  }
}

TEST_CASE("ffn_forward matches a two-loop reference") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 1 + rng.index(12), h = 1 + rng.index(20), n = 1 + rng.index(6);
    FFNLayer f{rng.uniform(d, h, -1, 1), rng.uniform(1, h, -1, 1), rng.uniform(h, d, -1, 1), rng.uniform(1, d, -1, 1)};
    const Tensor x = rng.uniform(n, d, -1, 1);
    const Tensor ref = Tensor::from_rows(reference_ffn(f, to_matrix(x)));
    CHECK(max_abs_diff(ffn_forward(f, x), ref) < 1e-12);
  }
}

TEST_CASE("attention prefixes") {
  const EncoderConfig c = tiny_config();
  const EncoderWeights w = init_encoder(c, 3);
  const AttentionLayer& layer = w.blocks[0].attention;
  Rng rng(4);
  const Tensor x = rng.uniform(5, c.model_dim, -1, 1);

  SUBCASE("absent prefix matches plain attention") {
    CHECK(max_abs_diff(attention_forward(layer, x), Tensor::from_rows(reference_attention(layer, to_matrix(x)))) <
          1e-12);
  }
  SUBCASE("empty prefix is bitwise the no-prefix path") {
    std::vector<HeadPrefix> prefix(c.num_heads, HeadPrefix{Tensor(0, c.head_key_dim), Tensor(0, c.head_value_dim)});
    AttentionHooks hooks;
    hooks.prefix = prefix;
    CHECK(bitwise_equal(attention_forward(layer, x, hooks), attention_forward(layer, x)));
  }
  SUBCASE("rows normalize over seq + l keys") {
    std::vector<HeadPrefix> prefix;
    for (std::size_t h = 0; h < c.num_heads; ++h) {
      prefix.push_back({rng.uniform(4, c.head_key_dim, -2, 2), rng.uniform(4, c.head_value_dim, -2, 2)});
    }
    std::vector<Tensor> probs;
    AttentionHooks hooks;
    hooks.prefix = prefix;
    hooks.probabilities = &probs;
    attention_forward(layer, x, hooks);
    REQUIRE(probs.size() == c.num_heads);
    for (const Tensor& p : probs) {
      CHECK(p.cols() == 5 + 4);
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
  }
  SUBCASE("mismatched prefix lengths are a contract error") {
    std::vector<HeadPrefix> prefix(c.num_heads, HeadPrefix{Tensor(3, c.head_key_dim), Tensor(2, c.head_value_dim)});
    AttentionHooks hooks;
    hooks.prefix = prefix;
    CHECK_THROWS_AS(attention_forward(layer, x, hooks), ContractError);
  }
  SUBCASE("prefix list must cover every head") {
    std::vector<HeadPrefix> prefix(1, HeadPrefix{Tensor(1, c.head_key_dim), Tensor(1, c.head_value_dim)});
    AttentionHooks hooks;
    hooks.prefix = prefix;
    CHECK_THROWS_AS(attention_forward(layer, x, hooks), ContractError);
  }
}

TEST_CASE("post-norm layout golden regression") {
  EncoderConfig c = tiny_config();
  EncoderWeights w = init_encoder(c, 5);
  randomize(w, 6);
  Rng rng(7);
  const TuningAdapter none;
  for (int trial = 0; trial < 5; ++trial) {
    const auto tokens = random_tokens(rng, 3 + rng.index(8), static_cast<int>(c.vocab_size));
    const Tensor got = encoder_forward(w, tokens, none);
    const auto post = reference_logits(w, tokens, true);
    const auto pre = reference_logits(w, tokens, false);
    double post_diff = 0.0, pre_diff = 0.0;
    for (std::size_t j = 0; j < post.size(); ++j) {
      post_diff = std::max(post_diff, std::abs(got.at(0, j) - post[j]));
      pre_diff = std::max(pre_diff, std::abs(got.at(0, j) - pre[j]));
    }
    CHECK(post_diff < 1e-12);
    CHECK(pre_diff > 1e-6);
  }
}

TEST_CASE("encoder_forward determinism and degenerate adapters") {
  const EncoderConfig c = tiny_config();
  Rng rng(8);
  const auto tokens = random_tokens(rng, 9, static_cast<int>(c.vocab_size));

  AdapterSpec frozen;
  frozen.mode = TuningMode::kFrozen;
  const Model base = make_model(c, frozen, 10, 11);
  const Tensor reference = encoder_forward(base, tokens);
  CHECK(bitwise_equal(reference, encoder_forward(base, tokens)));

  SUBCASE("FL with zero added units") {
    AdapterSpec spec;
    spec.added_units = 0;
    const Model m = make_model(c, spec, 10, 11);
    CHECK(bitwise_equal(encoder_forward(m, tokens), reference));
  }
  SUBCASE("FL with zero W'_2 (the initial state)") {
    AdapterSpec spec;
    spec.added_units = 16;
    Model m = make_model(c, spec, 10, 11);
    CHECK(bitwise_equal(encoder_forward(m, tokens), reference));
    m.adapter.add_ffn->layers[1]->w_out = rng.uniform(16, c.model_dim, -1, 1);
    CHECK_FALSE(bitwise_equal(encoder_forward(m, tokens), reference));
  }
  SUBCASE("MA at initialization") {
    AdapterSpec spec;
    spec.mode = TuningMode::kAttentionExpansion;
    spec.expansion_width = 3;
    const Model m = make_model(c, spec, 10, 11);
    CHECK(max_abs_diff(encoder_forward(m, tokens), reference) < 1e-14);
  }
  SUBCASE("per-token output") {
    const Tensor per_token = encoder_forward(base, tokens, OutputKind::kPerToken);
    CHECK(per_token.rows() == tokens.size());
    CHECK(bitwise_equal(slice_rows(per_token, 0, 1), reference));
  }
}

TEST_CASE("encoder_forward input validation") {
  const EncoderConfig c = tiny_config();
  AdapterSpec spec;
  spec.mode = TuningMode::kPromptV1;
  spec.prompt_length = 4;
  const Model m = make_model(c, spec, 1, 2);
  std::vector<int> tokens(c.max_seq_len - 4, 3);
  CHECK_NOTHROW(encoder_forward(m, tokens));
  tokens.push_back(3);
  CHECK_THROWS_AS(encoder_forward(m, tokens), ContractError);
  const std::vector<int> unknown{1, static_cast<int>(c.vocab_size)};
  CHECK_THROWS_AS(encoder_forward(m, unknown), ContractError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(encoder_forward(m, negative), ContractError);
  CHECK_THROWS_AS(encoder_forward(m, std::vector<int>{}), ContractError);
  CHECK(encoder_hidden(m.backbone, std::vector<int>{1, 2, 3}, m.adapter).rows() == 3);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.num_heads = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = tiny_config();
  c.ffn_dim = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  const EncoderConfig r = EncoderConfig::roberta_base();
  CHECK(r.model_dim == 768);
  CHECK(r.ffn_dim == 3072);
  CHECK(r.num_heads * r.head_key_dim == 768);
}

TEST_CASE("encoder gradients pass the finite-difference check in every mode") {
  const EncoderConfig c = tiny_config();
  Rng rng(12);
  const auto tokens = random_tokens(rng, 6, static_cast<int>(c.vocab_size));
  const std::vector<int> label{2};
  for (TuningMode mode : {TuningMode::kFrozen, TuningMode::kFineTune, TuningMode::kAddFFN, TuningMode::kPromptV1,
                          TuningMode::kPromptV2, TuningMode::kAttentionExpansion}) {
    CAPTURE(to_string(mode));
    AdapterSpec spec;
    spec.mode = mode;
    spec.added_units = 5;
    spec.prompt_length = 3;
    spec.expansion_width = 2;
    Model m = make_model(c, spec, 13, 14);
    ParamRegistry registry = register_parameters(m);
    for (const auto& e : registry.entries()) {
      if (!e.info.trainable) continue;
      Tensor t = e.tensor;
      for (double& v : t.mutable_data())
        if (v == 0.0) v = rng.normal(0.1);
    }
    for (const auto& e : registry.entries()) {
      if (!e.info.trainable) continue;
      Tensor t = e.tensor;
      CAPTURE(e.info.name);
      CHECK(check_gradients([&] { return cross_entropy(encoder_forward(m, tokens), label); }, t) < 1e-4);
    }
  }
}
