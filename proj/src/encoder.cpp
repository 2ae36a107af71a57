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

#include "fltune/encoder.hpp"

#include <cmath>
#include <string>

#include "fltune/autograd.hpp"
#include "fltune/random.hpp"

namespace fltune {

void EncoderConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ContractError(std::string("encoder config: ") + what);
  };
  require(model_dim >= 1, "model_dim must be positive");
  require(num_heads >= 1, "num_heads must be positive");
  require(head_key_dim * num_heads >= 1, "head_key_dim * num_heads must be positive");
  require(head_value_dim * num_heads >= 1, "head_value_dim * num_heads must be positive");
  require(ffn_dim >= 1, "ffn_dim must be at least 1");
  require(num_layers >= 1, "num_layers must be positive");
  require(vocab_size >= 1, "vocab_size must be positive");
  require(max_seq_len >= 1, "max_seq_len must be positive");
  require(num_classes >= 1, "num_classes must be positive");
  require(init_std > 0.0, "init_std must be positive");
  require(layer_norm_eps > 0.0, "layer_norm_eps must be positive");
}

EncoderConfig EncoderConfig::roberta_base() {
  EncoderConfig c = standard(768, 12, 12);
  c.vocab_size = 50265;
  c.max_seq_len = 514;
  return c;
}

EncoderConfig EncoderConfig::standard(std::size_t model_dim, std::size_t num_heads, std::size_t num_layers) {
  EncoderConfig c;
  c.model_dim = model_dim;
  c.num_heads = num_heads;
  c.head_key_dim = model_dim / num_heads;
  c.head_value_dim = model_dim / num_heads;
  c.ffn_dim = 4 * model_dim;
  c.num_layers = num_layers;
  return c;
}

EncoderWeights EncoderWeights::clone() const {
  EncoderWeights copy;
  copy.config = config;
  copy.token_embedding = token_embedding.clone();
  copy.position_embedding = position_embedding.clone();
  copy.head_weight = head_weight.clone();
  copy.head_bias = head_bias.clone();
  copy.blocks.reserve(blocks.size());
  for (const auto& b : blocks) {
    EncoderBlock nb;
    for (std::size_t h = 0; h < b.attention.num_heads(); ++h) {
      nb.attention.w_query.push_back(b.attention.w_query[h].clone());
      nb.attention.w_key.push_back(b.attention.w_key[h].clone());
      nb.attention.w_value.push_back(b.attention.w_value[h].clone());
    }
    nb.attention.w_output = b.attention.w_output.clone();
    nb.attention.b_output = b.attention.b_output.clone();
    nb.attention_norm = {b.attention_norm.gain.clone(), b.attention_norm.bias.clone()};
    nb.ffn = {b.ffn.w_in.clone(), b.ffn.b_in.clone(), b.ffn.w_out.clone(), b.ffn.b_out.clone()};
    nb.ffn_norm = {b.ffn_norm.gain.clone(), b.ffn_norm.bias.clone()};
    copy.blocks.push_back(std::move(nb));
  }
  return copy;
}

EncoderWeights init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const double s = config.init_std;
  const std::size_t d = config.model_dim;

  EncoderWeights w;
  w.config = config;
  w.token_embedding = rng.gaussian(config.vocab_size, d, s);
  w.position_embedding = rng.gaussian(config.max_seq_len, d, s);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    EncoderBlock b;
    for (std::size_t h = 0; h < config.num_heads; ++h) {
      b.attention.w_query.push_back(rng.gaussian(d, config.head_key_dim, s));
      b.attention.w_key.push_back(rng.gaussian(d, config.head_key_dim, s));
      b.attention.w_value.push_back(rng.gaussian(d, config.head_value_dim, s));
    }
    b.attention.w_output = rng.gaussian(config.num_heads * config.head_value_dim, d, s);
    b.attention.b_output = Tensor(1, d);
    b.attention_norm = {Tensor(1, d, 1.0), Tensor(1, d)};
    b.ffn.w_in = rng.gaussian(d, config.ffn_dim, s);
    b.ffn.b_in = Tensor(1, config.ffn_dim);
    b.ffn.w_out = rng.gaussian(config.ffn_dim, d, s);
    b.ffn.b_out = Tensor(1, d);
    b.ffn_norm = {Tensor(1, d, 1.0), Tensor(1, d)};
    w.blocks.push_back(std::move(b));
  }
  w.head_weight = rng.gaussian(d, config.num_classes, s);
  w.head_bias = Tensor(1, config.num_classes);
  return w;
}

Tensor attention_forward(const AttentionLayer& layer, const Tensor& x, const AttentionHooks& hooks) {
  const std::size_t heads = layer.num_heads();
  if (heads == 0) throw ContractError("attention_forward: layer has no heads");
  if (x.cols() != layer.w_query.front().rows()) {
    throw DimensionError("attention_forward: input " + to_string(x.shape()) + " does not match W_query " +
                         to_string(layer.w_query.front().shape()));
  }
  if (!hooks.prefix.empty() && hooks.prefix.size() != heads) {
    throw ContractError("attention_forward: prefix given for " + std::to_string(hooks.prefix.size()) + " of " +
                        std::to_string(heads) + " heads");
  }
  if (!hooks.expansion.empty() && hooks.expansion.size() != heads) {
    throw ContractError("attention_forward: expansion given for " + std::to_string(hooks.expansion.size()) +
                        " of " + std::to_string(heads) + " heads");
  }
  if (!hooks.prefix.empty() && !hooks.expansion.empty()) {
    throw ContractError("attention_forward: prefix and expansion hooks cannot be combined");
  }

  std::vector<Tensor> head_outputs;
  std::vector<Tensor> expansion_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(layer.w_query[h].cols()));
    const Tensor q = matmul(x, layer.w_query[h]);
    Tensor k = matmul(x, layer.w_key[h]);
    Tensor v = matmul(x, layer.w_value[h]);
    if (!hooks.prefix.empty()) {
      const HeadPrefix& p = hooks.prefix[h];
      if (p.key.rows() != p.value.rows()) {
        throw ContractError("attention_forward: key prefix has " + std::to_string(p.key.rows()) +
                            " rows but value prefix has " + std::to_string(p.value.rows()));
      }
      if (p.key.rows() > 0) {
        k = concat(p.key, k, Axis::kRows);
        v = concat(p.value, v, Axis::kRows);
      }
    }
    Tensor scores = matmul_nt(q, k);
    if (!hooks.expansion.empty()) {
      const HeadExpansion& e = hooks.expansion[h];
      scores = matmul_nt_add(scores, matmul(x, e.query), matmul(x, e.key));
    }
    const Tensor probs = softmax_rows(scale(scores, inv_scale));
    if (hooks.probabilities != nullptr) hooks.probabilities->push_back(probs);
    head_outputs.push_back(matmul(probs, v));
    if (!hooks.expansion.empty()) expansion_outputs.push_back(matmul(probs, matmul(x, hooks.expansion[h].value)));
  }

  Tensor out = matmul(concat(head_outputs, Axis::kCols), layer.w_output);
  for (std::size_t h = 0; h < expansion_outputs.size(); ++h) {
    out = matmul_add(out, expansion_outputs[h], hooks.expansion[h].output);
  }
  return add_row(out, layer.b_output);
}

Tensor ffn_forward(const FFNLayer& layer, const Tensor& x) {
  if (x.cols() != layer.w_in.rows()) {
    throw DimensionError("ffn_forward: input " + to_string(x.shape()) + " does not match W_in " +
                         to_string(layer.w_in.shape()));
  }
  const Tensor hidden = relu(add_row(matmul(x, layer.w_in), layer.b_in));
  return add_row(matmul(hidden, layer.w_out), layer.b_out);
}

}  // namespace fltune
