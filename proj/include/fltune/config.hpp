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
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fltune/encoder.hpp"
#include "fltune/tasks.hpp"
#include "fltune/training.hpp"
#include "fltune/tuning.hpp"

namespace fltune {

/// Malformed or inconsistent experiment configuration. The message carries
/// the source position or the offending key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything that determines a run, together with `seed`.
///
/// The backbone is initialized from `seed`, the adapter from `seed + 1`, and
/// the training order from `seed` as well. encoder.num_classes always follows
/// the task. Defaults describe the desk setup: FL with 16 added units, 1000
/// pretext steps, three epochs.
struct ExperimentConfig {
  EncoderConfig encoder;
  AdapterSpec tuning;
  TaskSpec task;
  TrainConfig train;
  PretrainConfig pretrain;
  std::string output_dir;  // empty: $FLTUNE_OUTPUT_ROOT, else "runs"
  std::uint64_t seed = 1;

  ExperimentConfig();

  std::uint64_t backbone_seed() const { return seed; }
  std::uint64_t adapter_seed() const { return seed + 1; }

  /// Throws ConfigError for cross-section inconsistencies (vocabulary, sequence
  /// budget, dimensions).
  void validate() const;
};

nlohmann::json to_json(const EncoderConfig& config);
nlohmann::json to_json(const AdapterSpec& spec);
nlohmann::json to_json(const TaskSpec& spec);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const PretrainConfig& config);
nlohmann::json to_json(const ExperimentConfig& config);

/// Strict conversion: unknown keys and wrong value types throw ConfigError
/// naming the key path. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Parses JSON text; syntax errors are reported as `source:line:col: ...`.
nlohmann::json parse_json_text(std::string_view text, std::string_view source);
ExperimentConfig parse_config(std::string_view text, std::string_view source = "<config>");
ExperimentConfig load_config(const std::string& path);

/// Applies `dotted.key=value` to a config object. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, std::string_view assignment);

}  // namespace fltune
