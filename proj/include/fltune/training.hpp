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
#include <optional>
#include <span>
#include <vector>

#include "fltune/model.hpp"
#include "fltune/optimizer.hpp"
#include "fltune/params.hpp"
#include "fltune/tasks.hpp"

namespace fltune {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  /// Stop after this many optimizer steps; 0 means no cap.
  std::size_t max_steps = 0;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double smoothing_alpha = 0.99;
  /// Smoothed-loss level reported by steps_to_threshold; 0 disables.
  double loss_threshold = 0.0;

  /// Throws std::invalid_argument for a non-positive learning rate, a zero
  /// batch size or smoothing_alpha outside [0, 1).
  void validate() const;
  OptimizerConfig optimizer_config() const;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double loss = 0.0;
  double smoothed_loss = 0.0;
  double accuracy = 0.0;  // on the step's batch (token accuracy for tagging)
  double wallclock_ms = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  /// Exact-match span F1, tagging tasks only.
  std::optional<double> f1;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps taken so far
  EvalResult dev;
};

struct RunMetrics {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  EvalResult final_train;
  EvalResult final_dev;
  std::optional<std::size_t> steps_to_threshold;
};

/// alpha * previous + (1 - alpha) * current.
double smooth_loss(double previous_smoothed, double current, double alpha);

/// First 1-based step whose smoothed loss is <= threshold.
std::optional<std::size_t> steps_to_threshold(std::span<const double> smoothed, double threshold);
std::optional<std::size_t> steps_to_threshold(const RunMetrics& metrics, double threshold);

EvalResult evaluate(const Model& model, std::span<const Example> examples, const TaskSpec& spec);

/// Mini-batch training of the registry's trainable tensors with mean
/// cross-entropy over the head logits. Data order and every random draw
/// derive from config.seed. The dev split is evaluated after each epoch.
/// Throws TrainingDiverged when a batch loss is not finite.
RunMetrics train(Model& model, ParamRegistry& registry, const SyntheticTask& task, const TrainConfig& config);

/// Stratum used for few-shot sampling: the label of pooled tasks, the
/// number of entity spans (capped at 3) for tagging.
int example_stratum(const TaskSpec& spec, const Example& example);

/// Stratified order of the training pool: every prefix of the order keeps
/// each stratum within one example of its pool proportion.
std::vector<std::size_t> stratified_order(const SyntheticTask& task, std::uint64_t seed);

/// Training-pool indices for each size, ascending. Sets are nested because
/// each is a prefix of the same stratified order. Throws ContractError when a
/// size exceeds the pool.
std::vector<std::vector<std::size_t>> fewshot_indices(const SyntheticTask& task, std::span<const std::size_t> sizes,
                                                      std::uint64_t seed);

/// One task per size, sharing dev/test with `task`.
std::vector<SyntheticTask> fewshot_subsample(const SyntheticTask& task, std::span<const std::size_t> sizes,
                                             std::uint64_t seed);

/// Header `step,loss,smoothed_loss,accuracy,wallclock_ms`; doubles in
/// shortest round-trip form; LF line endings.
void write_metrics_csv(std::ostream& out, std::span<const StepRecord> steps);
std::vector<StepRecord> read_metrics_csv(std::istream& in);

}  // namespace fltune
