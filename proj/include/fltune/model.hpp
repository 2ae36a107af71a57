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

#include <cstdint>
#include <span>
#include <vector>

#include "fltune/encoder.hpp"
#include "fltune/tuning.hpp"

namespace fltune {

/// Which encoder rows feed the task head.
enum class OutputKind {
  kPooled,    // first input position (after any PV1 prompt rows): 1 x num_classes
  kPerToken,  // every input position: seq x num_classes
};

/// A backbone plus the adapter of one tuning method.
struct Model {
  EncoderWeights backbone;
  TuningAdapter adapter;

  const EncoderConfig& config() const { return backbone.config; }
};

/// Backbone from `backbone_seed`, adapter from `adapter_seed`.
Model make_model(const EncoderConfig& config, const AdapterSpec& spec, std::uint64_t backbone_seed,
                 std::uint64_t adapter_seed);

struct ForwardTrace {
  /// Attention distributions, layer-major then head.
  std::vector<Tensor> attention_probabilities;
};

/// Final hidden states for the input positions (seq x model_dim), PV1 prompt
/// rows excluded.
Tensor encoder_hidden(const EncoderWeights& weights, std::span<const int> tokens, const TuningAdapter& adapter,
                      ForwardTrace* trace = nullptr);

/// Embeddings (+ PV1 prompt rows) -> num_layers x [attention (+PV2 prefix or
/// MA expansion) -> residual -> layer norm -> FFN (+ added units) -> residual
/// -> layer norm] -> task head.
///
/// Throws ContractError for unknown token ids or sequences longer than
/// max_seq_len minus the PV1 prompt length.
Tensor encoder_forward(const EncoderWeights& weights, std::span<const int> tokens, const TuningAdapter& adapter,
                       OutputKind output = OutputKind::kPooled, ForwardTrace* trace = nullptr);

inline Tensor encoder_forward(const Model& model, std::span<const int> tokens, OutputKind output = OutputKind::kPooled,
                              ForwardTrace* trace = nullptr) {
  return encoder_forward(model.backbone, tokens, model.adapter, output, trace);
}

}  // namespace fltune
