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

#include "fltune/tuning.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "fltune/autograd.hpp"

namespace fltune {

std::string_view to_string(TuningMode mode) {
  switch (mode) {
    case TuningMode::kFrozen: return "frozen";
    case TuningMode::kFineTune: return "finetune";
    case TuningMode::kAddFFN: return "fl";
    case TuningMode::kPromptV1: return "pv1";
    case TuningMode::kPromptV2: return "pv2";
    case TuningMode::kAttentionExpansion: return "ma";
  }
  return "unknown";
}

TuningMode parse_tuning_mode(std::string_view name) {
  for (TuningMode m : {TuningMode::kFrozen, TuningMode::kFineTune, TuningMode::kAddFFN, TuningMode::kPromptV1,
                       TuningMode::kPromptV2, TuningMode::kAttentionExpansion}) {
    if (name == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown tuning mode '" + std::string(name) +
                              "' (expected frozen, finetune, fl, pv1, pv2 or ma)");
}

std::string_view to_string(InsertPosition position) {
  switch (position) {
    case InsertPosition::kPrefix: return "prefix";
    case InsertPosition::kInfix: return "infix";
    case InsertPosition::kSuffix: return "suffix";
  }
  return "unknown";
}

InsertPosition parse_insert_position(std::string_view name) {
  if (name == "prefix") return InsertPosition::kPrefix;
  if (name == "infix") return InsertPosition::kInfix;
  if (name == "suffix") return InsertPosition::kSuffix;
  throw std::invalid_argument("unknown insert position '" + std::string(name) +
                              "' (expected prefix, infix or suffix)");
}

std::size_t TuningAdapter::input_prompt_rows() const {
  if (prompt && prompt->input_prompts) return prompt->input_prompts->rows();
  return 0;
}

TuningAdapter TuningAdapter::clone() const {
  TuningAdapter copy;
  copy.spec = spec;
  if (add_ffn) {
    AddFFNAdapter a = *add_ffn;
    for (auto& layer : a.layers) {
      if (layer) *layer = {layer->w_in.clone(), layer->b_in.clone(), layer->w_out.clone()};
    }
    copy.add_ffn = std::move(a);
  }
  if (prompt) {
    PromptAdapter p;
    p.length = prompt->length;
    if (prompt->input_prompts) p.input_prompts = prompt->input_prompts->clone();
    for (const auto& heads : prompt->layer_prefixes) {
      auto& out = p.layer_prefixes.emplace_back();
      for (const auto& hp : heads) out.push_back({hp.key.clone(), hp.value.clone()});
    }
    copy.prompt = std::move(p);
  }
  if (attention) {
    AttentionExpansionAdapter m;
    m.width = attention->width;
    for (const auto& heads : attention->layers) {
      auto& out = m.layers.emplace_back();
      for (const auto& e : heads) out.push_back({e.query.clone(), e.key.clone(), e.value.clone(), e.output.clone()});
    }
    copy.attention = std::move(m);
  }
  return copy;
}

TuningAdapter make_adapter(const EncoderConfig& config, const AdapterSpec& spec, Rng& rng) {
  config.validate();
  TuningAdapter adapter;
  adapter.spec = spec;
  const double s = spec.init_std;
  const std::size_t d = config.model_dim;

  switch (spec.mode) {
    case TuningMode::kFrozen:
    case TuningMode::kFineTune:
      break;
    case TuningMode::kAddFFN: {
      AddFFNAdapter a;
      a.added_units = spec.added_units;
      a.position = spec.position;
      a.split_index = spec.split_index.value_or(config.ffn_dim / 2);
      if (a.split_index > config.ffn_dim) {
        throw ContractError("infix split index " + std::to_string(a.split_index) + " outside [0, " +
                            std::to_string(config.ffn_dim) + "]");
      }
      std::vector<bool> selected(config.num_layers, spec.layers.empty());
      for (std::size_t l : spec.layers) {
        if (l >= config.num_layers) {
          throw ContractError("adapter layer " + std::to_string(l) + " outside encoder of " +
                              std::to_string(config.num_layers) + " layers");
        }
        selected[l] = true;
      }
      a.layers.resize(config.num_layers);
      for (std::size_t l = 0; l < config.num_layers; ++l) {
        if (!selected[l]) continue;
        a.layers[l] = AddFFNLayer{rng.gaussian(d, spec.added_units, s), Tensor(1, spec.added_units),
                                  Tensor(spec.added_units, d)};
      }
      adapter.add_ffn = std::move(a);
      break;
    }
    case TuningMode::kPromptV1: {
      PromptAdapter p;
      p.length = spec.prompt_length;
      p.input_prompts = rng.gaussian(spec.prompt_length, d, s);
      adapter.prompt = std::move(p);
      break;
    }
    case TuningMode::kPromptV2: {
      PromptAdapter p;
      p.length = spec.prompt_length;
      for (std::size_t l = 0; l < config.num_layers; ++l) {
        auto& heads = p.layer_prefixes.emplace_back();
        for (std::size_t h = 0; h < config.num_heads; ++h) {
          Tensor key = rng.gaussian(spec.prompt_length, config.head_key_dim, s);
          Tensor value = rng.gaussian(spec.prompt_length, config.head_value_dim, s);
          heads.push_back({std::move(key), std::move(value)});
        }
      }
      adapter.prompt = std::move(p);
      break;
    }
    case TuningMode::kAttentionExpansion: {
      AttentionExpansionAdapter m;
      m.width = spec.expansion_width;
      const std::size_t w = spec.expansion_width;
      for (std::size_t l = 0; l < config.num_layers; ++l) {
        auto& heads = m.layers.emplace_back();
        for (std::size_t h = 0; h < config.num_heads; ++h) {
          Tensor query = rng.gaussian(d, w, s);
          Tensor value = rng.gaussian(d, w, s);
          heads.push_back({std::move(query), Tensor(d, w), std::move(value), Tensor(w, d)});
        }
      }
      adapter.attention = std::move(m);
      break;
    }
  }
  return adapter;
}

void check_add_ffn_shapes(const FFNLayer& layer, const AddFFNLayer& added) {
  const std::size_t units = added.w_in.cols();
  if (added.b_in.rows() != 1 || added.b_in.cols() != units || added.w_out.rows() != units) {
    throw DimensionError("added FFN units disagree: W'_1 " + to_string(added.w_in.shape()) + ", b'_1 " +
                         to_string(added.b_in.shape()) + ", W'_2 " + to_string(added.w_out.shape()));
  }
  if (added.w_in.rows() != layer.w_in.rows() || added.w_out.cols() != layer.w_out.cols()) {
    throw DimensionError("added FFN units " + to_string(added.w_in.shape()) + "/" + to_string(added.w_out.shape()) +
                         " do not fit FFN layer " + to_string(layer.w_in.shape()) + "/" +
                         to_string(layer.w_out.shape()));
  }
}

Tensor ffn_fl_concat(const FFNLayer& layer, const AddFFNLayer& added, const Tensor& x, InsertPosition position,
                     std::size_t split_index) {
  check_add_ffn_shapes(layer, added);
  const std::size_t hidden = layer.w_in.cols();
  std::size_t split = 0;
  switch (position) {
    case InsertPosition::kPrefix: split = 0; break;
    case InsertPosition::kSuffix: split = hidden; break;
    case InsertPosition::kInfix:
      if (split_index > hidden) {
        throw ContractError("infix split index " + std::to_string(split_index) + " outside [0, " +
                            std::to_string(hidden) + "]");
      }
      split = split_index;
      break;
  }
  const std::array<Tensor, 3> w_in = {slice_cols(layer.w_in, 0, split), added.w_in,
                                      slice_cols(layer.w_in, split, hidden - split)};
  const std::array<Tensor, 3> b_in = {slice_cols(layer.b_in, 0, split), added.b_in,
                                      slice_cols(layer.b_in, split, hidden - split)};
  const std::array<Tensor, 3> w_out = {slice_rows(layer.w_out, 0, split), added.w_out,
                                       slice_rows(layer.w_out, split, hidden - split)};
  const Tensor wide_in = concat(w_in, Axis::kCols);
  const Tensor wide_bias = concat(b_in, Axis::kCols);
  const Tensor wide_out = concat(w_out, Axis::kRows);
  const Tensor h = relu(add_row(matmul(x, wide_in), wide_bias));
  return add_row(matmul(h, wide_out), layer.b_out);
}

Tensor ffn_fl_split(const FFNLayer& layer, const AddFFNLayer& added, const Tensor& x) {
  check_add_ffn_shapes(layer, added);
  if (x.cols() != layer.w_in.rows()) {
    throw DimensionError("ffn_fl_split: input " + to_string(x.shape()) + " does not match W_1 " +
                         to_string(layer.w_in.shape()));
  }
  const Tensor added_hidden = relu(add_row(matmul(x, added.w_in), added.b_in));
  const Tensor hidden = relu(add_row(matmul(x, layer.w_in), layer.b_in));
  const Tensor acc = matmul(added_hidden, added.w_out);
  return add_row(matmul_add(acc, hidden, layer.w_out), layer.b_out);
}

Tensor ma_forward(const AttentionLayer& layer, std::span<const HeadExpansion> expansion, const Tensor& x) {
  AttentionHooks hooks;
  hooks.expansion = expansion;
  return attention_forward(layer, x, hooks);
}

Tensor ma_concat(const AttentionLayer& layer, std::span<const HeadExpansion> expansion, const Tensor& x) {
  const std::size_t heads = layer.num_heads();
  if (expansion.size() != heads) {
    throw ContractError("ma_concat: expansion given for " + std::to_string(expansion.size()) + " of " +
                        std::to_string(heads) + " heads");
  }
  std::vector<Tensor> value_parts;
  std::vector<Tensor> expansion_parts;
  std::vector<Tensor> output_rows = {layer.w_output};
  for (std::size_t h = 0; h < heads; ++h) {
    const HeadExpansion& e = expansion[h];
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(layer.w_query[h].cols()));
    const Tensor q = matmul(x, concat(layer.w_query[h], e.query, Axis::kCols));
    const Tensor k = matmul(x, concat(layer.w_key[h], e.key, Axis::kCols));
    const Tensor v = matmul(x, concat(layer.w_value[h], e.value, Axis::kCols));
    const Tensor probs = softmax_rows(scale(matmul_nt(q, k), inv_scale));
    const Tensor wide = matmul(probs, v);
    const std::size_t dv = layer.w_value[h].cols();
    value_parts.push_back(slice_cols(wide, 0, dv));
    expansion_parts.push_back(slice_cols(wide, dv, wide.cols() - dv));
    output_rows.push_back(e.output);
  }
  std::vector<Tensor> all_parts = value_parts;
  all_parts.insert(all_parts.end(), expansion_parts.begin(), expansion_parts.end());
  const Tensor out = matmul(concat(all_parts, Axis::kCols), concat(output_rows, Axis::kRows));
  return add_row(out, layer.b_output);
}

namespace {

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.index(hi - lo + 1);
}

FFNLayer random_ffn(Rng& rng, std::size_t d, std::size_t hidden) {
  return {rng.uniform(d, hidden, -1.0, 1.0), rng.uniform(1, hidden, -1.0, 1.0), rng.uniform(hidden, d, -1.0, 1.0),
          rng.uniform(1, d, -1.0, 1.0)};
}

AddFFNLayer random_added(Rng& rng, std::size_t d, std::size_t units) {
  return {rng.uniform(d, units, -1.0, 1.0), rng.uniform(1, units, -1.0, 1.0), rng.uniform(units, d, -1.0, 1.0)};
}

AttentionLayer random_attention(Rng& rng, std::size_t d, std::size_t heads, std::size_t dk, std::size_t dv) {
  AttentionLayer a;
  for (std::size_t h = 0; h < heads; ++h) {
    a.w_query.push_back(rng.uniform(d, dk, -0.5, 0.5));
    a.w_key.push_back(rng.uniform(d, dk, -0.5, 0.5));
    a.w_value.push_back(rng.uniform(d, dv, -0.5, 0.5));
  }
  a.w_output = rng.uniform(heads * dv, d, -0.5, 0.5);
  a.b_output = rng.uniform(1, d, -0.5, 0.5);
  return a;
}

void require_trials(std::size_t trials) {
  if (trials == 0) throw ContractError("equivalence check needs at least one trial");
}

void tally(EquivalenceReport& report, double deviation) {
  ++report.trials;
  report.max_deviation = std::max(report.max_deviation, deviation);
  if (!(deviation <= report.tolerance)) ++report.failures;
}

}  // namespace

EquivalenceReport verify_theorem1(const TrialShapes& shapes, std::size_t trials, double tolerance,
                                  std::uint64_t seed) {
  require_trials(trials);
  NoGradScope no_grad;
  Rng rng(seed);
  EquivalenceReport report{"ffn split vs concatenated", 0, 0, 0.0, tolerance};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, shapes.min_model_dim, shapes.max_model_dim);
    const std::size_t hidden = draw(rng, shapes.min_ffn_dim, shapes.max_ffn_dim);
    const std::size_t units = draw(rng, shapes.min_added, shapes.max_added);
    const std::size_t rows = draw(rng, shapes.min_rows, shapes.max_rows);
    const auto position = static_cast<InsertPosition>(t % 3);
    const std::size_t split = draw(rng, 0, hidden);
    const FFNLayer layer = random_ffn(rng, d, hidden);
    const AddFFNLayer added = random_added(rng, d, units);
    const Tensor x = rng.uniform(rows, d, -1.0, 1.0);
    tally(report, max_abs_diff(ffn_fl_concat(layer, added, x, position, split), ffn_fl_split(layer, added, x)));
  }
  return report;
}

EquivalenceReport verify_theorem2(const TrialShapes& shapes, std::size_t trials, double tolerance,
                                  std::uint64_t seed) {
  require_trials(trials);
  NoGradScope no_grad;
  Rng rng(seed);
  EquivalenceReport report{"prefix/infix/suffix positions", 0, 0, 0.0, tolerance};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, shapes.min_model_dim, shapes.max_model_dim);
    const std::size_t hidden = draw(rng, shapes.min_ffn_dim, shapes.max_ffn_dim);
    const std::size_t units = draw(rng, shapes.min_added, shapes.max_added);
    const std::size_t rows = draw(rng, shapes.min_rows, shapes.max_rows);
    std::size_t split = draw(rng, 0, hidden);
    if (t == 0) split = 0;
    if (t == 1) split = hidden;
    const FFNLayer layer = random_ffn(rng, d, hidden);
    const AddFFNLayer added = random_added(rng, d, units);
    const Tensor x = rng.uniform(rows, d, -1.0, 1.0);
    const Tensor prefix = ffn_fl_concat(layer, added, x, InsertPosition::kPrefix);
    const Tensor infix = ffn_fl_concat(layer, added, x, InsertPosition::kInfix, split);
    const Tensor suffix = ffn_fl_concat(layer, added, x, InsertPosition::kSuffix);
    const double dev =
        std::max({max_abs_diff(prefix, infix), max_abs_diff(prefix, suffix), max_abs_diff(infix, suffix)});
    tally(report, dev);
  }
  return report;
}

EquivalenceReport verify_attention_expansion(std::size_t trials, double tolerance, std::uint64_t seed) {
  require_trials(trials);
  NoGradScope no_grad;
  Rng rng(seed);
  EquivalenceReport report{"attention expansion split vs concatenated", 0, 0, 0.0, tolerance};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, 4, 16);
    const std::size_t heads = draw(rng, 1, 4);
    const std::size_t dk = draw(rng, 1, 8);
    const std::size_t dv = draw(rng, 1, 8);
    const std::size_t width = draw(rng, 0, 6);
    const std::size_t rows = draw(rng, 1, 12);
    const AttentionLayer layer = random_attention(rng, d, heads, dk, dv);
    std::vector<HeadExpansion> expansion;
    for (std::size_t h = 0; h < heads; ++h) {
      expansion.push_back({rng.uniform(d, width, -0.5, 0.5), rng.uniform(d, width, -0.5, 0.5),
                           rng.uniform(d, width, -0.5, 0.5), rng.uniform(width, d, -0.5, 0.5)});
    }
    const Tensor x = rng.uniform(rows, d, -1.0, 1.0);
    tally(report, max_abs_diff(ma_forward(layer, expansion, x), ma_concat(layer, expansion, x)));
  }
  return report;
}

EquivalenceReport verify_prefix_normalization(std::size_t trials, double tolerance, std::uint64_t seed) {
  require_trials(trials);
  NoGradScope no_grad;
  Rng rng(seed);
  EquivalenceReport report{"prefix attention row normalization", 0, 0, 0.0, tolerance};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, 4, 16);
    const std::size_t heads = draw(rng, 1, 4);
    const std::size_t dk = draw(rng, 1, 8);
    const std::size_t dv = draw(rng, 1, 8);
    const std::size_t prefix_len = draw(rng, 1, 8);
    const std::size_t rows = draw(rng, 1, 12);
    const AttentionLayer layer = random_attention(rng, d, heads, dk, dv);
    std::vector<HeadPrefix> prefix;
    for (std::size_t h = 0; h < heads; ++h) {
      prefix.push_back({rng.uniform(prefix_len, dk, -1.0, 1.0), rng.uniform(prefix_len, dv, -1.0, 1.0)});
    }
    const Tensor x = rng.uniform(rows, d, -1.0, 1.0);
    std::vector<Tensor> probs;
    AttentionHooks hooks;
    hooks.prefix = prefix;
    hooks.probabilities = &probs;
    attention_forward(layer, x, hooks);
    double dev = 0.0;
    for (const Tensor& p : probs) {
      if (p.cols() != rows + prefix_len) {
        dev = std::max(dev, 1.0);
        continue;
      }
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) total += p.at(i, j);
        dev = std::max(dev, std::abs(total - 1.0));
      }
    }
    tally(report, dev);
  }
  return report;
}

}  // namespace fltune
