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
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "fltune/encoder.hpp"
#include "fltune/model.hpp"

namespace fltune {

// Reserved token ids shared by every generator.
inline constexpr int kMaskToken = 0;
inline constexpr int kClsToken = 1;
inline constexpr int kSepToken = 2;
inline constexpr int kFirstContentToken = 3;

enum class TaskKind {
  kClassification,  // label = class of the single marker token
  kSentencePair,    // label = 1 iff both segments carry the same marker
  kTagging,         // per-token B/I/O tags over runs of entity tokens
};

std::string_view to_string(TaskKind kind);
/// Accepts "classification", "pair", "tagging".
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::kClassification;
  std::size_t vocab_size = 64;
  std::size_t seq_len = 16;
  /// Classification only; pair tasks are binary and tagging uses 3 tags.
  std::size_t num_classes = 2;
  std::size_t train_size = 2000;
  std::size_t dev_size = 500;
  std::size_t test_size = 500;
  std::uint64_t seed = 7;

  bool operator==(const TaskSpec&) const = default;
};

struct Example {
  std::vector<int> tokens;
  /// One label for pooled tasks, one tag per token for tagging.
  std::vector<int> labels;

  bool operator==(const Example&) const = default;
};

struct SyntheticTask {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

/// Head width the task needs.
std::size_t task_num_classes(const TaskSpec& spec);
OutputKind task_output_kind(const TaskSpec& spec);

/// Deterministic in `spec.seed`. Splits never share an example. Throws
/// ContractError when the vocabulary cannot hold the rule's marker set or the
/// sequence is too short for the layout.
SyntheticTask generate_task(const TaskSpec& spec);

/// The generating rule, re-derived from tokens alone.
std::vector<int> oracle_labels(const TaskSpec& spec, std::span<const int> tokens);

/// Marker ids of classification class `c`.
std::vector<int> class_markers(std::size_t c);

/// Spans (begin, end) of B/I/O tag sequences; I after O opens a span.
std::vector<std::pair<std::size_t, std::size_t>> tag_spans(std::span<const int> tags);

struct SpanCounts {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;
  double f1() const;
};
/// Exact-match span counts of one sequence, accumulated into `counts`.
void accumulate_spans(std::span<const int> gold, std::span<const int> predicted, SpanCounts& counts);

/// One line per example: space-separated token ids, a tab, space-separated labels.
void write_examples(std::ostream& out, std::span<const Example> examples);
std::vector<Example> read_examples(std::istream& in);

struct PretrainConfig {
  std::size_t steps = 0;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double mask_rate = 0.15;
  std::uint64_t seed = 11;
};

struct PretrainReport {
  std::vector<double> losses;  // one per step
};

/// Trains every backbone tensor through a temporary vocabulary head on
/// [CLS]-prefixed sequences from a fixed sparse Markov chain. Two targets
/// share one cross-entropy: masked tokens at their positions, and every
/// distinct visible token at position 0. The task head is left untouched.
/// Throws TrainingDiverged on a non-finite loss.
PretrainReport pretrain_backbone(EncoderWeights& weights, const PretrainConfig& config);

}  // namespace fltune
