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
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fltune/config.hpp"
#include "fltune/gradcheck.hpp"
#include "fltune/model.hpp"
#include "fltune/params.hpp"
#include "fltune/tasks.hpp"
#include "fltune/training.hpp"

namespace fltune {

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "FLTUNE_OUTPUT_ROOT";

/// Directory a run writes to: config.output_dir when set, otherwise
/// `$FLTUNE_OUTPUT_ROOT/<mode>-seed<seed>` (root defaults to "runs").
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

/// Backbone (pre-trained when config.pretrain.steps > 0), adapter and task
/// for one experiment. Everything is a function of the config.
struct Experiment {
  ExperimentConfig config;
  Model model;
  SyntheticTask task;
};

Experiment build_experiment(const ExperimentConfig& config);

/// Single-line JSON echo written into checkpoints and summaries.
std::string config_echo(const ExperimentConfig& config);

nlohmann::json to_json(const ParamCounts& counts);
nlohmann::json to_json(const EvalResult& result);

struct RunResult {
  RunMetrics metrics;
  ParamCounts counts;
  EvalResult test;
  nlohmann::json summary;
};

/// Trains `experiment` and writes metrics.csv, summary.json and
/// adapter.flckpt into `dir` (created if needed).
RunResult run_training(Experiment& experiment, const std::filesystem::path& dir);

struct FewshotResult {
  std::vector<std::size_t> sizes;
  std::vector<std::vector<std::size_t>> indices;  // ascending pool indices per size
  std::vector<RunResult> runs;
  nlohmann::json summary;
};

/// One training run per size on nested stratified subsets, each from the same
/// initial backbone and adapter. Writes `size_<n>/` run directories and a
/// comparative fewshot_summary.json into `dir`.
FewshotResult run_fewshot(const ExperimentConfig& config, const std::vector<std::size_t>& sizes,
                          const std::filesystem::path& dir);

struct TensorGradError {
  std::string name;
  double error = 0.0;
};

/// Finite-difference check of every trainable tensor of the configured mode
/// on the loss of the first two training examples. Zero-initialized tensors
/// are redrawn from N(0, 0.1) first so no gradient is trivially zero.
std::vector<TensorGradError> gradcheck_experiment(const ExperimentConfig& config,
                                                  const GradCheckOptions& options = {});

/// Largest model width gradcheck accepts.
inline constexpr std::size_t kGradcheckMaxModelDim = 32;

}  // namespace fltune
