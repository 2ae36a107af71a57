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

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fltune/tensor.hpp"

namespace fltune {

/// Shape of the backbone encoder.
struct EncoderConfig {
  std::size_t model_dim = 32;
  std::size_t num_heads = 4;
  std::size_t head_key_dim = 8;
  std::size_t head_value_dim = 8;
  std::size_t ffn_dim = 128;
  std::size_t num_layers = 2;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 32;
  std::size_t num_classes = 2;
  double init_std = 0.02;
  double layer_norm_eps = 1e-5;

  /// Throws ContractError when a dimension is unusable.
  void validate() const;

  /// model_dim=768, 12 heads of width 64, ffn_dim=3072, 12 layers.
  static EncoderConfig roberta_base();
  /// Standard relation ffn_dim = 4 * model_dim, head dims = model_dim / heads.
  static EncoderConfig standard(std::size_t model_dim, std::size_t num_heads, std::size_t num_layers);

  bool operator==(const EncoderConfig&) const = default;
};

struct FFNLayer {
  Tensor w_in;   // model_dim x ffn_dim
  Tensor b_in;   // 1 x ffn_dim
  Tensor w_out;  // ffn_dim x model_dim
  Tensor b_out;  // 1 x model_dim
};

struct AttentionLayer {
  std::vector<Tensor> w_query;  // per head, model_dim x head_key_dim
  std::vector<Tensor> w_key;    // per head, model_dim x head_key_dim
  std::vector<Tensor> w_value;  // per head, model_dim x head_value_dim
  Tensor w_output;              // (num_heads * head_value_dim) x model_dim
  Tensor b_output;              // 1 x model_dim

  std::size_t num_heads() const { return w_query.size(); }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct EncoderBlock {
  AttentionLayer attention;
  LayerNormParams attention_norm;
  FFNLayer ffn;
  LayerNormParams ffn_norm;
};

struct EncoderWeights {
  EncoderConfig config;
  Tensor token_embedding;     // vocab_size x model_dim
  Tensor position_embedding;  // max_seq_len x model_dim
  std::vector<EncoderBlock> blocks;
  Tensor head_weight;  // model_dim x num_classes
  Tensor head_bias;    // 1 x num_classes

  /// Deep copy; the copy shares no storage with this backbone.
  EncoderWeights clone() const;
};

/// Gaussian(0, init_std) matrices, zero biases, unit layer-norm gains.
EncoderWeights init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Key/value rows prepended to one head's keys and values.
struct HeadPrefix {
  Tensor key;    // prefix_len x head_key_dim
  Tensor value;  // prefix_len x head_value_dim
};

/// Extra inner-dimension columns for one head: query/key widen the score
/// product, value/output widen the value path.
struct HeadExpansion {
  Tensor query;   // model_dim x width
  Tensor key;     // model_dim x width
  Tensor value;   // model_dim x width
  Tensor output;  // width x model_dim
};

/// Optional per-head additions to an attention layer.
struct AttentionHooks {
  std::span<const HeadPrefix> prefix;        // empty, or one per head
  std::span<const HeadExpansion> expansion;  // empty, or one per head
  /// When set, receives each head's attention distribution (seq x keys).
  std::vector<Tensor>* probabilities = nullptr;
};

/// Multi-head scaled dot-product self-attention followed by the output
/// projection. Prefix rows join the keys and values ahead of the sequence.
Tensor attention_forward(const AttentionLayer& layer, const Tensor& x, const AttentionHooks& hooks = {});

/// ReLU(x W_in + b_in) W_out + b_out.
Tensor ffn_forward(const FFNLayer& layer, const Tensor& x);

}  // namespace fltune
