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

#include "fltune/model.hpp"

#include <string>

#include "fltune/autograd.hpp"
#include "fltune/random.hpp"

namespace fltune {

Model make_model(const EncoderConfig& config, const AdapterSpec& spec, std::uint64_t backbone_seed,
                 std::uint64_t adapter_seed) {
  Model model;
  model.backbone = init_encoder(config, backbone_seed);
  Rng rng(adapter_seed);
  model.adapter = make_adapter(config, spec, rng);
  return model;
}

namespace {

// Hidden states for every row, prompt rows included.
Tensor run_blocks(const EncoderWeights& weights, std::span<const int> tokens, const TuningAdapter& adapter,
                  ForwardTrace* trace) {
  const EncoderConfig& config = weights.config;
  const std::size_t prompt_rows = adapter.input_prompt_rows();
  const std::size_t n = tokens.size();
  if (n == 0) throw ContractError("encoder_forward: empty token sequence");
  if (n + prompt_rows > config.max_seq_len) {
    throw ContractError("encoder_forward: sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " +
                        std::to_string(config.max_seq_len) +
                        (prompt_rows > 0 ? " minus " + std::to_string(prompt_rows) + " prompt rows" : std::string()));
  }
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw ContractError("encoder_forward: unknown token id " + std::to_string(id) + " (vocab_size " +
                          std::to_string(config.vocab_size) + ")");
    }
  }

  Tensor x = gather_rows(weights.token_embedding, tokens);
  if (prompt_rows > 0) x = concat(*adapter.prompt->input_prompts, x, Axis::kRows);
  x = add(x, slice_rows(weights.position_embedding, 0, n + prompt_rows));

  const bool use_prefix = adapter.prompt && !adapter.prompt->layer_prefixes.empty();
  for (std::size_t l = 0; l < weights.blocks.size(); ++l) {
    const EncoderBlock& block = weights.blocks[l];
    AttentionHooks hooks;
    if (use_prefix) hooks.prefix = adapter.prompt->layer_prefixes.at(l);
    if (adapter.attention) hooks.expansion = adapter.attention->layers.at(l);
    if (trace != nullptr) hooks.probabilities = &trace->attention_probabilities;

    const Tensor attended = attention_forward(block.attention, x, hooks);
    x = layer_norm(add(x, attended), block.attention_norm.gain, block.attention_norm.bias, config.layer_norm_eps);

    const AddFFNLayer* added = nullptr;
    if (adapter.add_ffn && adapter.add_ffn->layers.at(l)) added = &*adapter.add_ffn->layers[l];
    const Tensor transformed = added != nullptr ? ffn_fl_split(block.ffn, *added, x) : ffn_forward(block.ffn, x);
    x = layer_norm(add(x, transformed), block.ffn_norm.gain, block.ffn_norm.bias, config.layer_norm_eps);
  }

  return x;
}

}  // namespace

Tensor encoder_hidden(const EncoderWeights& weights, std::span<const int> tokens, const TuningAdapter& adapter,
                      ForwardTrace* trace) {
  const Tensor x = run_blocks(weights, tokens, adapter, trace);
  return slice_rows(x, adapter.input_prompt_rows(), tokens.size());
}

Tensor encoder_forward(const EncoderWeights& weights, std::span<const int> tokens, const TuningAdapter& adapter,
                       OutputKind output, ForwardTrace* trace) {
  const Tensor x = run_blocks(weights, tokens, adapter, trace);
  const std::size_t prompt_rows = adapter.input_prompt_rows();
  const Tensor features =
      output == OutputKind::kPooled ? slice_rows(x, prompt_rows, 1) : slice_rows(x, prompt_rows, tokens.size());
  return add_row(matmul(features, weights.head_weight), weights.head_bias);
}

}  // namespace fltune
