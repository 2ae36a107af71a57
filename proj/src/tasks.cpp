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

#include "fltune/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>

#include "fltune/autograd.hpp"
#include "fltune/optimizer.hpp"
#include "fltune/random.hpp"

namespace fltune {
namespace {

constexpr int kMarkersPerClass = 2;
constexpr int kPairMarkers = 4;
constexpr int kEntityTokens = 8;
constexpr std::size_t kMinFiller = 4;
constexpr double kEntityRate = 0.3;

int first_filler(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::kClassification:
      return kFirstContentToken + kMarkersPerClass * static_cast<int>(spec.num_classes);
    case TaskKind::kSentencePair: return kFirstContentToken + kPairMarkers;
    case TaskKind::kTagging: return kFirstContentToken + kEntityTokens;
  }
  return kFirstContentToken;
}

void check_spec(const TaskSpec& spec) {
  const int filler = first_filler(spec);
  if (spec.vocab_size < static_cast<std::size_t>(filler) + kMinFiller) {
    throw ContractError("vocab_size " + std::to_string(spec.vocab_size) + " too small for the " +
                        std::string(to_string(spec.kind)) + " marker set (need at least " +
                        std::to_string(filler + static_cast<int>(kMinFiller)) + ")");
  }
  if (spec.kind == TaskKind::kClassification && (spec.num_classes < 2 || spec.seq_len < 2)) {
    throw ContractError("classification needs num_classes >= 2 and seq_len >= 2");
  }
  if (spec.kind == TaskKind::kSentencePair && spec.seq_len < 4) {
    throw ContractError("sentence-pair task needs seq_len >= 4");
  }
  if (spec.seq_len == 0) throw ContractError("seq_len must be positive");
  if (spec.train_size == 0 || spec.dev_size == 0 || spec.test_size == 0) {
    throw ContractError("task split sizes must be positive");
  }
}

bool is_entity(int token) { return token >= kFirstContentToken && token < kFirstContentToken + kEntityTokens; }

std::size_t pair_first_len(const TaskSpec& spec) { return (spec.seq_len - 2) / 2; }

int marker_class(int token, std::size_t num_classes) {
  const int last = kFirstContentToken + kMarkersPerClass * static_cast<int>(num_classes);
  if (token < kFirstContentToken || token >= last) return -1;
  return (token - kFirstContentToken) / kMarkersPerClass;
}

int pair_marker(int token) {
  return token >= kFirstContentToken && token < kFirstContentToken + kPairMarkers ? token : -1;
}

Example draw_example(const TaskSpec& spec, Rng& rng) {
  const int filler_lo = first_filler(spec);
  const int filler_hi = static_cast<int>(spec.vocab_size) - 1;
  Example ex;
  switch (spec.kind) {
    case TaskKind::kClassification: {
      ex.tokens.push_back(kClsToken);
      for (std::size_t i = 1; i < spec.seq_len; ++i) ex.tokens.push_back(rng.integer(filler_lo, filler_hi));
      const int label = rng.integer(0, static_cast<int>(spec.num_classes) - 1);
      const auto markers = class_markers(static_cast<std::size_t>(label));
      ex.tokens[1 + rng.index(spec.seq_len - 1)] = markers[rng.index(markers.size())];
      break;
    }
    case TaskKind::kSentencePair: {
      const std::size_t a = pair_first_len(spec);
      const std::size_t b = spec.seq_len - 2 - a;
      ex.tokens.push_back(kClsToken);
      for (std::size_t i = 0; i < a; ++i) ex.tokens.push_back(rng.integer(filler_lo, filler_hi));
      ex.tokens.push_back(kSepToken);
      for (std::size_t i = 0; i < b; ++i) ex.tokens.push_back(rng.integer(filler_lo, filler_hi));
      const int first = kFirstContentToken + rng.integer(0, kPairMarkers - 1);
      int second = first;
      if (rng.integer(0, 1) == 0) {
        second = kFirstContentToken + (first - kFirstContentToken + rng.integer(1, kPairMarkers - 1)) % kPairMarkers;
      }
      ex.tokens[1 + rng.index(a)] = first;
      ex.tokens[a + 2 + rng.index(b)] = second;
      break;
    }
    case TaskKind::kTagging: {
      for (std::size_t i = 0; i < spec.seq_len; ++i) {
        if (rng.uniform(0.0, 1.0) < kEntityRate) {
          ex.tokens.push_back(kFirstContentToken + rng.integer(0, kEntityTokens - 1));
        } else {
          ex.tokens.push_back(rng.integer(filler_lo, filler_hi));
        }
      }
      break;
    }
  }
  ex.labels = oracle_labels(spec, ex.tokens);
  return ex;
}

std::string key_of(const std::vector<int>& tokens) {
  std::string key;
  for (int t : tokens) key += std::to_string(t) + ',';
  return key;
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification: return "classification";
    case TaskKind::kSentencePair: return "pair";
    case TaskKind::kTagging: return "tagging";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification") return TaskKind::kClassification;
  if (name == "pair") return TaskKind::kSentencePair;
  if (name == "tagging") return TaskKind::kTagging;
  throw std::invalid_argument("unknown task kind '" + std::string(name) +
                              "' (expected classification, pair or tagging)");
}

std::size_t task_num_classes(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::kClassification: return spec.num_classes;
    case TaskKind::kSentencePair: return 2;
    case TaskKind::kTagging: return 3;
  }
  return spec.num_classes;
}

OutputKind task_output_kind(const TaskSpec& spec) {
  return spec.kind == TaskKind::kTagging ? OutputKind::kPerToken : OutputKind::kPooled;
}

std::vector<int> class_markers(std::size_t c) {
  std::vector<int> out;
  for (int k = 0; k < kMarkersPerClass; ++k) {
    out.push_back(kFirstContentToken + kMarkersPerClass * static_cast<int>(c) + k);
  }
  return out;
}

std::vector<int> oracle_labels(const TaskSpec& spec, std::span<const int> tokens) {
  switch (spec.kind) {
    case TaskKind::kClassification: {
      for (int t : tokens) {
        const int c = marker_class(t, spec.num_classes);
        if (c >= 0) return {c};
      }
      throw ContractError("classification example has no marker token");
    }
    case TaskKind::kSentencePair: {
      const std::size_t a = pair_first_len(spec);
      int first = -1, second = -1;
      for (std::size_t i = 1; i <= a && i < tokens.size(); ++i) first = std::max(first, pair_marker(tokens[i]));
      for (std::size_t i = a + 2; i < tokens.size(); ++i) second = std::max(second, pair_marker(tokens[i]));
      if (first < 0 || second < 0) throw ContractError("pair example is missing a segment marker");
      return {first == second ? 1 : 0};
    }
    case TaskKind::kTagging: {
      std::vector<int> tags(tokens.size(), 0);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!is_entity(tokens[i])) continue;
        tags[i] = (i > 0 && is_entity(tokens[i - 1])) ? 2 : 1;
      }
      return tags;
    }
  }
  return {};
}

SyntheticTask generate_task(const TaskSpec& spec) {
  check_spec(spec);
  Rng rng(spec.seed);
  SyntheticTask task;
  task.spec = spec;
  std::unordered_set<std::string> seen;
  auto fill = [&](std::vector<Example>& split, std::size_t n) {
    split.reserve(n);
    std::size_t attempts = 0;
    while (split.size() < n) {
      if (++attempts > 100 * n + 1000) {
        throw ContractError("cannot draw " + std::to_string(n) + " distinct examples; increase seq_len or vocab");
      }
      Example ex = draw_example(spec, rng);
      if (seen.insert(key_of(ex.tokens)).second) split.push_back(std::move(ex));
    }
  };
  fill(task.train, spec.train_size);
  fill(task.dev, spec.dev_size);
  fill(task.test, spec.test_size);
  return task;
}

std::vector<std::pair<std::size_t, std::size_t>> tag_spans(std::span<const int> tags) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < tags.size()) {
    if (tags[i] == 0) {
      ++i;
      continue;
    }
    const std::size_t begin = i++;
    while (i < tags.size() && tags[i] == 2) ++i;
    spans.emplace_back(begin, i);
  }
  return spans;
}

double SpanCounts::f1() const {
  if (gold == 0 && predicted == 0) return 1.0;
  if (matched == 0) return 0.0;
  const double p = static_cast<double>(matched) / static_cast<double>(predicted);
  const double r = static_cast<double>(matched) / static_cast<double>(gold);
  return 2.0 * p * r / (p + r);
}

void accumulate_spans(std::span<const int> gold, std::span<const int> predicted, SpanCounts& counts) {
  const auto g = tag_spans(gold);
  const auto p = tag_spans(predicted);
  counts.gold += g.size();
  counts.predicted += p.size();
  for (const auto& span : p) counts.matched += static_cast<std::size_t>(std::count(g.begin(), g.end(), span));
}

void write_examples(std::ostream& out, std::span<const Example> examples) {
  for (const auto& ex : examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) out << (i ? " " : "") << ex.tokens[i];
    out << '\t';
    for (std::size_t i = 0; i < ex.labels.size(); ++i) out << (i ? " " : "") << ex.labels[i];
    out << '\n';
  }
}

std::vector<Example> read_examples(std::istream& in) {
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("example line " + std::to_string(line_no) + " has no tab");
    Example ex;
    std::istringstream tokens(line.substr(0, tab)), labels(line.substr(tab + 1));
    for (int v; tokens >> v;) ex.tokens.push_back(v);
    for (int v; labels >> v;) ex.labels.push_back(v);
    out.push_back(std::move(ex));
  }
  return out;
}

PretrainReport pretrain_backbone(EncoderWeights& weights, const PretrainConfig& config) {
  PretrainReport report;
  if (config.steps == 0) return report;
  if (config.batch_size == 0) throw ContractError("pretrain_backbone: batch_size must be positive");
  const EncoderConfig& c = weights.config;
  if (c.max_seq_len < 2) throw ContractError("pretrain_backbone: max_seq_len must be at least 2");
  if (c.vocab_size < static_cast<std::size_t>(kFirstContentToken) + 2) {
    throw ContractError("pretrain_backbone: vocabulary too small for the pretext");
  }
  Rng rng(config.seed);
  const int lo = kFirstContentToken;
  const int hi = static_cast<int>(c.vocab_size) - 1;

  // Each content token has two admissible successors.
  std::vector<std::array<int, 2>> successors(c.vocab_size);
  for (int t = lo; t <= hi; ++t) successors[static_cast<std::size_t>(t)] = {rng.integer(lo, hi), rng.integer(lo, hi)};

  Tensor vocab_head = rng.gaussian(c.model_dim, c.vocab_size, c.init_std);
  Tensor vocab_bias(1, c.vocab_size);
  std::vector<Tensor> params = {weights.token_embedding, weights.position_embedding, vocab_head, vocab_bias};
  for (auto& b : weights.blocks) {
    for (std::size_t h = 0; h < b.attention.num_heads(); ++h) {
      params.push_back(b.attention.w_query[h]);
      params.push_back(b.attention.w_key[h]);
      params.push_back(b.attention.w_value[h]);
    }
    for (const Tensor& t : {b.attention.w_output, b.attention.b_output, b.attention_norm.gain, b.attention_norm.bias,
                            b.ffn.w_in, b.ffn.b_in, b.ffn.w_out, b.ffn.b_out, b.ffn_norm.gain, b.ffn_norm.bias}) {
      params.push_back(t);
    }
  }
  std::vector<bool> previous_flags;
  for (auto& p : params) {
    previous_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
  }
  Optimizer optimizer(params, {OptimizerKind::kAdam, config.learning_rate});
  const std::size_t max_len = c.max_seq_len;
  const std::size_t min_len = std::max<std::size_t>(2, max_len / 4);
  const TuningAdapter none;

  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& p : params) p.clear_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor total;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      // [CLS] followed by a Markov run of random length.
      const std::size_t len = min_len + rng.index(max_len - min_len + 1);
      std::vector<int> clean(len);
      clean[0] = kClsToken;
      clean[1] = rng.integer(lo, hi);
      for (std::size_t i = 2; i < len; ++i) {
        clean[i] = successors[static_cast<std::size_t>(clean[i - 1])][rng.index(2)];
      }
      std::vector<int> noisy = clean;
      std::vector<std::size_t> masked;
      for (std::size_t i = 1; i < len; ++i)
        if (rng.uniform(0.0, 1.0) < config.mask_rate) masked.push_back(i);
      if (masked.empty()) masked.push_back(1 + rng.index(len - 1));
      for (std::size_t i : masked) noisy[i] = kMaskToken;

      // Denoising targets at masked positions, then the visible token set at
      // position 0.
      std::vector<int> rows;
      std::vector<int> targets;
      for (std::size_t i : masked) {
        rows.push_back(static_cast<int>(i));
        targets.push_back(clean[i]);
      }
      std::vector<bool> seen(c.vocab_size, false);
      for (std::size_t i = 1; i < len; ++i) {
        const int t = noisy[i];
        if (t == kMaskToken || seen[static_cast<std::size_t>(t)]) continue;
        seen[static_cast<std::size_t>(t)] = true;
        rows.push_back(0);
        targets.push_back(t);
      }
      const Tensor hidden = encoder_hidden(weights, noisy, none);
      const Tensor logits = add_row(matmul(gather_rows(hidden, rows), vocab_head), vocab_bias);
      const Tensor loss = cross_entropy(logits, targets);
      total = b == 0 ? loss : add(total, loss);
    }
    const Tensor loss = scale(total, 1.0 / static_cast<double>(config.batch_size));
    if (!std::isfinite(loss.item())) {
      throw TrainingDiverged("pretext loss became non-finite at step " + std::to_string(step + 1));
    }
    report.losses.push_back(loss.item());
    tape.backward(loss);
    optimizer.step();
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].clear_grad();
    params[i].set_requires_grad(previous_flags[i]);
  }
  return report;
}

}  // namespace fltune
