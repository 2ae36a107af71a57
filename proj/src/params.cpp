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

#include "fltune/params.hpp"

#include <algorithm>
#include <set>

namespace fltune {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEmbedding: return "embedding";
    case ParamGroup::kEncoderBlock: return "encoder_block";
    case ParamGroup::kHead: return "head";
    case ParamGroup::kAdapter: return "adapter";
  }
  return "unknown";
}

void ParamRegistry::add(std::string name, Tensor tensor, ParamGroup group, bool trainable) {
  for (const auto& e : entries_) {
    if (e.info.name == name) throw ContractError("parameter '" + name + "' registered twice");
    if (e.tensor.same_storage(tensor)) {
      throw ContractError("tensor of '" + name + "' already registered as '" + e.info.name + "'");
    }
  }
  tensor.set_requires_grad(trainable);
  if (!trainable) tensor.clear_grad();
  const std::uint64_t hash = content_hash(tensor);
  entries_.push_back({ParamInfo{std::move(name), tensor.shape(), group, trainable}, std::move(tensor), hash});
}

std::vector<ParamInfo> ParamRegistry::infos() const {
  std::vector<ParamInfo> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.info);
  return out;
}

std::vector<Tensor> ParamRegistry::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.info.trainable) out.push_back(e.tensor);
  return out;
}

const ParamRegistry::Entry* ParamRegistry::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.info.name == name) return &e;
  return nullptr;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

std::vector<std::string> ParamRegistry::modified_parameters(bool frozen_only) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (frozen_only && e.info.trainable) continue;
    if (content_hash(e.tensor) != e.registration_hash) out.push_back(e.info.name);
  }
  return out;
}

namespace {

std::string layer_name(std::size_t l, const std::string& rest) { return "layers." + std::to_string(l) + "." + rest; }

// Walks parameters in registration order. `visit(name, shape, group, trainable, tensor*)`
// receives a tensor pointer only when `weights`/`adapter` are given.
template <typename Visit>
void walk_backbone(const EncoderConfig& c, bool backbone_trainable, EncoderWeights* w, Visit&& visit) {
  const std::size_t d = c.model_dim;
  const bool bt = backbone_trainable;
  visit("embeddings.token", Shape{c.vocab_size, d}, ParamGroup::kEmbedding, bt, w ? &w->token_embedding : nullptr);
  visit("embeddings.position", Shape{c.max_seq_len, d}, ParamGroup::kEmbedding, bt,
        w ? &w->position_embedding : nullptr);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    EncoderBlock* b = w ? &w->blocks.at(l) : nullptr;
    const auto g = ParamGroup::kEncoderBlock;
    for (std::size_t h = 0; h < c.num_heads; ++h) {
      const std::string hs = std::to_string(h);
      visit(layer_name(l, "attention.query." + hs), Shape{d, c.head_key_dim}, g, bt,
            b ? &b->attention.w_query.at(h) : nullptr);
      visit(layer_name(l, "attention.key." + hs), Shape{d, c.head_key_dim}, g, bt,
            b ? &b->attention.w_key.at(h) : nullptr);
      visit(layer_name(l, "attention.value." + hs), Shape{d, c.head_value_dim}, g, bt,
            b ? &b->attention.w_value.at(h) : nullptr);
    }
    visit(layer_name(l, "attention.output.weight"), Shape{c.num_heads * c.head_value_dim, d}, g, bt,
          b ? &b->attention.w_output : nullptr);
    visit(layer_name(l, "attention.output.bias"), Shape{1, d}, g, bt, b ? &b->attention.b_output : nullptr);
    visit(layer_name(l, "attention_norm.gain"), Shape{1, d}, g, bt, b ? &b->attention_norm.gain : nullptr);
    visit(layer_name(l, "attention_norm.bias"), Shape{1, d}, g, bt, b ? &b->attention_norm.bias : nullptr);
    visit(layer_name(l, "ffn.w_in"), Shape{d, c.ffn_dim}, g, bt, b ? &b->ffn.w_in : nullptr);
    visit(layer_name(l, "ffn.b_in"), Shape{1, c.ffn_dim}, g, bt, b ? &b->ffn.b_in : nullptr);
    visit(layer_name(l, "ffn.w_out"), Shape{c.ffn_dim, d}, g, bt, b ? &b->ffn.w_out : nullptr);
    visit(layer_name(l, "ffn.b_out"), Shape{1, d}, g, bt, b ? &b->ffn.b_out : nullptr);
    visit(layer_name(l, "ffn_norm.gain"), Shape{1, d}, g, bt, b ? &b->ffn_norm.gain : nullptr);
    visit(layer_name(l, "ffn_norm.bias"), Shape{1, d}, g, bt, b ? &b->ffn_norm.bias : nullptr);
  }
  visit("head.weight", Shape{d, c.num_classes}, ParamGroup::kHead, true, w ? &w->head_weight : nullptr);
  visit("head.bias", Shape{1, c.num_classes}, ParamGroup::kHead, true, w ? &w->head_bias : nullptr);
}

}  // namespace

ParamRegistry register_parameters(Model& model) {
  ParamRegistry registry;
  const EncoderConfig& c = model.backbone.config;
  TuningAdapter& a = model.adapter;
  walk_backbone(c, a.mode() == TuningMode::kFineTune, &model.backbone,
                [&](std::string name, Shape, ParamGroup group, bool trainable, Tensor* t) {
                  registry.add(std::move(name), *t, group, trainable);
                });
  const auto g = ParamGroup::kAdapter;
  if (a.add_ffn) {
    for (std::size_t l = 0; l < a.add_ffn->layers.size(); ++l) {
      auto& layer = a.add_ffn->layers[l];
      if (!layer) continue;
      registry.add(layer_name(l, "addffn.w1_prime"), layer->w_in, g, true);
      registry.add(layer_name(l, "addffn.b1_prime"), layer->b_in, g, true);
      registry.add(layer_name(l, "addffn.w2_prime"), layer->w_out, g, true);
    }
  }
  if (a.prompt && a.prompt->input_prompts) registry.add("prompt.input", *a.prompt->input_prompts, g, true);
  if (a.prompt) {
    for (std::size_t l = 0; l < a.prompt->layer_prefixes.size(); ++l) {
      auto& heads = a.prompt->layer_prefixes[l];
      for (std::size_t h = 0; h < heads.size(); ++h) {
        registry.add(layer_name(l, "prefix.key." + std::to_string(h)), heads[h].key, g, true);
        registry.add(layer_name(l, "prefix.value." + std::to_string(h)), heads[h].value, g, true);
      }
    }
  }
  if (a.attention) {
    for (std::size_t l = 0; l < a.attention->layers.size(); ++l) {
      auto& heads = a.attention->layers[l];
      for (std::size_t h = 0; h < heads.size(); ++h) {
        const std::string hs = std::to_string(h);
        registry.add(layer_name(l, "expansion.query." + hs), heads[h].query, g, true);
        registry.add(layer_name(l, "expansion.key." + hs), heads[h].key, g, true);
        registry.add(layer_name(l, "expansion.value." + hs), heads[h].value, g, true);
        registry.add(layer_name(l, "expansion.output." + hs), heads[h].output, g, true);
      }
    }
  }
  return registry;
}

std::vector<ParamInfo> describe_parameters(const EncoderConfig& c, const AdapterSpec& spec) {
  c.validate();
  std::vector<ParamInfo> out;
  walk_backbone(c, spec.mode == TuningMode::kFineTune, nullptr,
                [&](std::string name, Shape shape, ParamGroup group, bool trainable, Tensor*) {
                  out.push_back({std::move(name), shape, group, trainable});
                });
  const auto g = ParamGroup::kAdapter;
  const std::size_t d = c.model_dim;
  switch (spec.mode) {
    case TuningMode::kFrozen:
    case TuningMode::kFineTune:
      break;
    case TuningMode::kAddFFN: {
      const std::set<std::size_t> chosen(spec.layers.begin(), spec.layers.end());
      const std::size_t a = spec.added_units;
      for (std::size_t l = 0; l < c.num_layers; ++l) {
        if (!chosen.empty() && !chosen.contains(l)) continue;
        out.push_back({layer_name(l, "addffn.w1_prime"), {d, a}, g, true});
        out.push_back({layer_name(l, "addffn.b1_prime"), {1, a}, g, true});
        out.push_back({layer_name(l, "addffn.w2_prime"), {a, d}, g, true});
      }
      break;
    }
    case TuningMode::kPromptV1:
      out.push_back({"prompt.input", {spec.prompt_length, d}, g, true});
      break;
    case TuningMode::kPromptV2:
      for (std::size_t l = 0; l < c.num_layers; ++l)
        for (std::size_t h = 0; h < c.num_heads; ++h) {
          out.push_back({layer_name(l, "prefix.key." + std::to_string(h)), {spec.prompt_length, c.head_key_dim}, g, true});
          out.push_back(
              {layer_name(l, "prefix.value." + std::to_string(h)), {spec.prompt_length, c.head_value_dim}, g, true});
        }
      break;
    case TuningMode::kAttentionExpansion: {
      const std::size_t w = spec.expansion_width;
      for (std::size_t l = 0; l < c.num_layers; ++l)
        for (std::size_t h = 0; h < c.num_heads; ++h) {
          const std::string hs = std::to_string(h);
          out.push_back({layer_name(l, "expansion.query." + hs), {d, w}, g, true});
          out.push_back({layer_name(l, "expansion.key." + hs), {d, w}, g, true});
          out.push_back({layer_name(l, "expansion.value." + hs), {d, w}, g, true});
          out.push_back({layer_name(l, "expansion.output." + hs), {w, d}, g, true});
        }
      break;
    }
  }
  return out;
}

ParamCounts count_parameters(std::span<const ParamInfo> params) {
  ParamCounts c;
  for (const auto& p : params) {
    const std::size_t n = p.shape.size();
    c.total += n;
    if (p.trainable) c.trainable += n;
    if (p.group == ParamGroup::kEncoderBlock) c.encoder_block += n;
    if (p.group == ParamGroup::kAdapter) c.adapter += n;
    if (p.trainable && (p.group == ParamGroup::kEncoderBlock || p.group == ParamGroup::kAdapter)) {
      c.block_trainable += n;
    }
  }
  c.fraction = c.total == 0 ? 0.0 : static_cast<double>(c.trainable) / static_cast<double>(c.total);
  const std::size_t block_pool = c.encoder_block + c.adapter;
  c.block_fraction = block_pool == 0 ? 0.0 : static_cast<double>(c.block_trainable) / static_cast<double>(block_pool);
  return c;
}

ParamCounts count_parameters(const ParamRegistry& registry) {
  const auto infos = registry.infos();
  return count_parameters(infos);
}

LayerBreakdown layer_breakdown(std::span<const ParamInfo> params, std::size_t layer) {
  LayerBreakdown b;
  const std::string prefix = "layers." + std::to_string(layer) + ".";
  for (const auto& p : params) {
    if (p.group != ParamGroup::kEncoderBlock || !p.name.starts_with(prefix)) continue;
    const std::string_view rest = std::string_view(p.name).substr(prefix.size());
    if (rest.starts_with("attention.")) b.attention += p.shape.size();
    else if (rest.starts_with("ffn.")) b.ffn += p.shape.size();
    else b.layer_norm += p.shape.size();
  }
  return b;
}

}  // namespace fltune
