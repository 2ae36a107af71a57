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
#include <string>
#include <string_view>
#include <vector>

#include "fltune/model.hpp"
#include "fltune/tensor.hpp"

namespace fltune {

enum class ParamGroup { kEmbedding, kEncoderBlock, kHead, kAdapter };

std::string_view to_string(ParamGroup group);

/// Name, shape and role of one parameter, without its values.
struct ParamInfo {
  std::string name;
  Shape shape;
  ParamGroup group = ParamGroup::kEncoderBlock;
  bool trainable = false;

  bool operator==(const ParamInfo&) const = default;
};

/// Every parameter of a model with its frozen/trainable flag and the content
/// hash taken when it was registered.
class ParamRegistry {
 public:
  struct Entry {
    ParamInfo info;
    Tensor tensor;
    std::uint64_t registration_hash = 0;
  };

  /// Sets the tensor's requires_grad from `trainable`. Duplicate names or a
  /// tensor registered twice throw ContractError.
  void add(std::string name, Tensor tensor, ParamGroup group, bool trainable);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<ParamInfo> infos() const;
  std::vector<Tensor> trainable_tensors() const;
  const Entry* find(std::string_view name) const;

  void zero_grad();
  /// Names whose current content hash differs from the registration hash.
  std::vector<std::string> modified_parameters(bool frozen_only) const;

 private:
  std::vector<Entry> entries_;
};

/// Registers backbone and adapter tensors. The backbone is trainable only in
/// fine-tune mode; the task head and adapter tensors always are.
ParamRegistry register_parameters(Model& model);

/// Closed-form enumeration of the same names and shapes register_parameters
/// would produce, computed from shapes alone (no tensors are allocated).
std::vector<ParamInfo> describe_parameters(const EncoderConfig& config, const AdapterSpec& spec);

struct ParamCounts {
  std::size_t total = 0;      // backbone + head + adapter
  std::size_t trainable = 0;
  double fraction = 0.0;      // trainable / total
  std::size_t encoder_block = 0;    // backbone attention, FFN and layer-norm parameters
  std::size_t adapter = 0;          // parameters introduced by the tuning method
  std::size_t block_trainable = 0;  // trainable among encoder_block + adapter
  double block_fraction = 0.0;      // block_trainable / (encoder_block + adapter)
};

ParamCounts count_parameters(std::span<const ParamInfo> params);
ParamCounts count_parameters(const ParamRegistry& registry);

struct LayerBreakdown {
  std::size_t attention = 0;
  std::size_t ffn = 0;
  std::size_t layer_norm = 0;
  std::size_t total() const { return attention + ffn + layer_norm; }
  double ffn_share() const { return total() == 0 ? 0.0 : static_cast<double>(ffn) / static_cast<double>(total()); }
};

/// Backbone parameter counts of one encoder layer.
LayerBreakdown layer_breakdown(std::span<const ParamInfo> params, std::size_t layer = 0);

}  // namespace fltune
