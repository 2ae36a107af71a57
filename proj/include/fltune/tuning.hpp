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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fltune/encoder.hpp"
#include "fltune/random.hpp"
#include "fltune/tensor.hpp"

namespace fltune {

enum class TuningMode {
  kFrozen,              // backbone frozen, only the task head trains
  kFineTune,            // every parameter trains
  kAddFFN,              // FL-tuning: extra hidden units in every FFN
  kPromptV1,            // trainable prompt rows at the input
  kPromptV2,            // trainable key/value prefixes in every attention layer
  kAttentionExpansion,  // MA-tuning: widened attention inner dimensions
};

std::string_view to_string(TuningMode mode);
/// Accepts "frozen", "finetune", "fl", "pv1", "pv2", "ma".
TuningMode parse_tuning_mode(std::string_view name);

/// Where the added FFN hidden units sit inside the widened hidden layer.
enum class InsertPosition { kPrefix, kInfix, kSuffix };

std::string_view to_string(InsertPosition position);
InsertPosition parse_insert_position(std::string_view name);

/// Hyperparameters that determine an adapter's shape.
struct AdapterSpec {
  TuningMode mode = TuningMode::kAddFFN;
  std::size_t added_units = 160;
  InsertPosition position = InsertPosition::kPrefix;
  /// Infix split point in [0, ffn_dim]; defaults to ffn_dim / 2.
  std::optional<std::size_t> split_index;
  std::size_t prompt_length = 160;
  /// Per-head widening of the score and value inner dimensions.
  std::size_t expansion_width = 8;
  /// Layers that receive added FFN units; empty means all layers.
  std::vector<std::size_t> layers;
  double init_std = 0.02;

  bool operator==(const AdapterSpec&) const = default;
};

/// Trainable units appended to one FFN hidden layer. There is no second
/// bias: the widened layer keeps the frozen output bias.
struct AddFFNLayer {
  Tensor w_in;   // model_dim x added_units
  Tensor b_in;   // 1 x added_units
  Tensor w_out;  // added_units x model_dim

  std::size_t added_units() const { return w_in.cols(); }
};

struct AddFFNAdapter {
  std::size_t added_units = 0;
  InsertPosition position = InsertPosition::kPrefix;
  std::size_t split_index = 0;
  /// One entry per encoder layer; layers outside the selected subset are empty.
  std::vector<std::optional<AddFFNLayer>> layers;
};

struct PromptAdapter {
  std::size_t length = 0;
  /// P-tuning v1: prompt rows placed ahead of the input embeddings.
  std::optional<Tensor> input_prompts;  // length x model_dim
  /// P-tuning v2: per layer, per head key/value prefixes.
  std::vector<std::vector<HeadPrefix>> layer_prefixes;
};

struct AttentionExpansionAdapter {
  std::size_t width = 0;
  std::vector<std::vector<HeadExpansion>> layers;  // per layer, per head
};

/// The trainable delta for one tuning method.
struct TuningAdapter {
  AdapterSpec spec;
  std::optional<AddFFNAdapter> add_ffn;
  std::optional<PromptAdapter> prompt;
  std::optional<AttentionExpansionAdapter> attention;

  TuningMode mode() const { return spec.mode; }
  /// Number of input positions taken by PV1 prompts.
  std::size_t input_prompt_rows() const;
  TuningAdapter clone() const;
};

/// Builds the adapter for `spec`. W_in of the added units and the prompt
/// tensors are Gaussian(init_std); b_in and the added W_out start at zero so
/// the adapter is transparent at step 0. Attention expansions zero their key
/// and output slices for the same reason.
TuningAdapter make_adapter(const EncoderConfig& config, const AdapterSpec& spec, Rng& rng);

/// Throws DimensionError unless the three added-unit tensors agree with each
/// other and with the frozen layer.
void check_add_ffn_shapes(const FFNLayer& layer, const AddFFNLayer& added);

/// Widened FFN evaluated by materializing the concatenated weights with the
/// added units at `position` (split_index is used for infix).
Tensor ffn_fl_concat(const FFNLayer& layer, const AddFFNLayer& added, const Tensor& x,
                     InsertPosition position = InsertPosition::kPrefix, std::size_t split_index = 0);

/// Widened FFN evaluated as addFFN(x) + FFN(x) without concatenation. The
/// added contribution seeds the accumulator, so the result matches the prefix
/// concatenated form term for term.
Tensor ffn_fl_split(const FFNLayer& layer, const AddFFNLayer& added, const Tensor& x);

/// Attention with widened inner dimensions, additive-split form.
Tensor ma_forward(const AttentionLayer& layer, std::span<const HeadExpansion> expansion, const Tensor& x);

/// Same function evaluated by materializing [W^Q : dW^Q], [W^K : dW^K],
/// [W^V : dW^V] and the stacked output projection.
Tensor ma_concat(const AttentionLayer& layer, std::span<const HeadExpansion> expansion, const Tensor& x);

struct EquivalenceReport {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;

  bool passed() const { return failures == 0; }
};

/// Random shape ranges for equivalence trials.
struct TrialShapes {
  std::size_t min_model_dim = 4, max_model_dim = 32;
  std::size_t min_ffn_dim = 8, max_ffn_dim = 64;
  std::size_t min_added = 1, max_added = 32;
  std::size_t min_rows = 1, max_rows = 16;
};

/// Split form versus concatenated form over random layers, inputs and
/// positions. A trial fails when the max deviation exceeds `tolerance`.
EquivalenceReport verify_theorem1(const TrialShapes& shapes, std::size_t trials, double tolerance,
                                  std::uint64_t seed);

/// Prefix, infix (random split, with boundary splits 0 and ffn_dim forced
/// into the first trials) and suffix concatenated forms compared pairwise.
EquivalenceReport verify_theorem2(const TrialShapes& shapes, std::size_t trials, double tolerance,
                                  std::uint64_t seed);

/// ma_forward versus ma_concat on random layers.
EquivalenceReport verify_attention_expansion(std::size_t trials, double tolerance, std::uint64_t seed);

/// Max |row sum - 1| of attention distributions over seq + prefix keys.
EquivalenceReport verify_prefix_normalization(std::size_t trials, double tolerance, std::uint64_t seed);

}  // namespace fltune
