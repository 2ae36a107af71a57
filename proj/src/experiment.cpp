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

#include "fltune/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <map>

#include "fltune/autograd.hpp"
#include "fltune/checkpoint.hpp"
#include "fltune/random.hpp"

namespace fltune {

using nlohmann::json;

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  const char* root = std::getenv(kOutputRootEnv);
  const std::filesystem::path base = root != nullptr && *root != '\0' ? root : "runs";
  return base / (std::string(to_string(config.tuning.mode)) + "-seed" + std::to_string(config.seed));
}

Experiment build_experiment(const ExperimentConfig& config) {
  config.validate();
  Experiment e{config, make_model(config.encoder, config.tuning, config.backbone_seed(), config.adapter_seed()),
               generate_task(config.task)};
  if (config.pretrain.steps > 0) pretrain_backbone(e.model.backbone, config.pretrain);
  return e;
}

std::string config_echo(const ExperimentConfig& config) { return to_json(config).dump(); }

json to_json(const ParamCounts& c) {
  return {{"total", c.total},
          {"trainable", c.trainable},
          {"fraction", c.fraction},
          {"encoder_block", c.encoder_block},
          {"adapter", c.adapter},
          {"block_trainable", c.block_trainable},
          {"block_fraction", c.block_fraction}};
}

json to_json(const EvalResult& r) {
  json j = {{"accuracy", r.accuracy}};
  j["f1"] = r.f1 ? json(*r.f1) : json(nullptr);
  return j;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace

RunResult run_training(Experiment& experiment, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const ExperimentConfig& config = experiment.config;
  ParamRegistry registry = register_parameters(experiment.model);

  RunResult result;
  result.counts = count_parameters(registry);
  TrainConfig train_config = config.train;
  train_config.seed = config.seed;
  result.metrics = train(experiment.model, registry, experiment.task, train_config);
  result.test = evaluate(experiment.model, experiment.task.test, experiment.task.spec);

  {
    std::ofstream out(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + (dir / "metrics.csv").string() + "'");
    write_metrics_csv(out, result.metrics.steps);
  }

  json epochs = json::array();
  for (const auto& e : result.metrics.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"step", e.step}, {"dev", to_json(e.dev)}});
  }
  const auto& m = result.metrics;
  result.summary = {
      {"mode", to_string(config.tuning.mode)},
      {"seed", config.seed},
      {"steps", m.steps.size()},
      {"final_train_loss", m.steps.empty() ? json(nullptr) : json(m.steps.back().loss)},
      {"final_smoothed_loss", m.steps.empty() ? json(nullptr) : json(m.steps.back().smoothed_loss)},
      {"loss_threshold", train_config.loss_threshold},
      {"steps_to_threshold", m.steps_to_threshold ? json(*m.steps_to_threshold) : json(nullptr)},
      {"train", to_json(m.final_train)},
      {"dev", to_json(m.final_dev)},
      {"test", to_json(result.test)},
      {"epochs", epochs},
      {"parameters", to_json(result.counts)},
      {"config", to_json(config)},
  };
  write_text(dir / "summary.json", result.summary.dump(2) + "\n");
  save_checkpoint((dir / "adapter.flckpt").string(), registry, CheckpointKind::kAdapter, config_echo(config));
  return result;
}

FewshotResult run_fewshot(const ExperimentConfig& config, const std::vector<std::size_t>& sizes,
                          const std::filesystem::path& dir) {
  const Experiment base = build_experiment(config);
  FewshotResult result;
  result.sizes = sizes;
  result.indices = fewshot_indices(base.task, sizes, config.seed);
  std::filesystem::create_directories(dir);

  json runs = json::array();
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    Experiment e{config, Model{base.model.backbone.clone(), base.model.adapter.clone()}, SyntheticTask{}};
    e.task.spec = base.task.spec;
    e.task.spec.train_size = sizes[k];
    for (std::size_t i : result.indices[k]) e.task.train.push_back(base.task.train[i]);
    e.task.dev = base.task.dev;
    e.task.test = base.task.test;

    std::map<int, std::size_t> strata;
    for (const auto& ex : e.task.train) ++strata[example_stratum(e.task.spec, ex)];
    json strata_json = json::object();
    for (const auto& [s, n] : strata) strata_json[std::to_string(s)] = n;

    const auto run_dir = dir / ("size_" + std::to_string(sizes[k]));
    RunResult run = run_training(e, run_dir);
    run.summary["fewshot_size"] = sizes[k];
    run.summary["train_indices"] = result.indices[k];
    run.summary["strata"] = strata_json;
    write_text(run_dir / "summary.json", run.summary.dump(2) + "\n");

    runs.push_back({{"size", sizes[k]},
                    {"dir", run_dir.filename().string()},
                    {"strata", strata_json},
                    {"train", run.summary["train"]},
                    {"dev", run.summary["dev"]},
                    {"test", run.summary["test"]},
                    {"steps", run.summary["steps"]},
                    {"steps_to_threshold", run.summary["steps_to_threshold"]}});
    result.runs.push_back(std::move(run));
  }

  std::map<int, std::size_t> pool;
  for (const auto& ex : base.task.train) ++pool[example_stratum(base.task.spec, ex)];
  json pool_json = json::object();
  for (const auto& [s, n] : pool) pool_json[std::to_string(s)] = n;

  result.summary = {{"mode", to_string(config.tuning.mode)},
                    {"seed", config.seed},
                    {"sizes", sizes},
                    {"pool_size", base.task.train.size()},
                    {"pool_strata", pool_json},
                    {"runs", runs}};
  write_text(dir / "fewshot_summary.json", result.summary.dump(2) + "\n");
  return result;
}

std::vector<TensorGradError> gradcheck_experiment(const ExperimentConfig& config, const GradCheckOptions& options) {
  if (config.encoder.model_dim > kGradcheckMaxModelDim) {
    throw ConfigError("gradcheck refuses model_dim " + std::to_string(config.encoder.model_dim) + " > " +
                      std::to_string(kGradcheckMaxModelDim));
  }
  ExperimentConfig small = config;
  small.task.train_size = 2;
  small.task.dev_size = 1;
  small.task.test_size = 1;
  Experiment e = build_experiment(small);
  ParamRegistry registry = register_parameters(e.model);

  Rng rng(config.seed ^ 0x5bd1e995ULL);
  for (const auto& entry : registry.entries()) {
    if (!entry.info.trainable) continue;
    Tensor t = entry.tensor;
    auto data = t.mutable_data();
    bool all_zero = true;
    for (double v : data) all_zero = all_zero && v == 0.0;
    if (all_zero) {
      for (double& v : data) v = rng.normal(0.1);
    }
  }

  const OutputKind kind = task_output_kind(e.task.spec);
  const auto loss = [&]() {
    Tensor total;
    for (std::size_t i = 0; i < e.task.train.size(); ++i) {
      const Tensor l = cross_entropy(encoder_forward(e.model, e.task.train[i].tokens, kind), e.task.train[i].labels);
      total = i == 0 ? l : add(total, l);
    }
    return total;
  };

  std::vector<TensorGradError> out;
  for (const auto& entry : registry.entries()) {
    if (!entry.info.trainable || entry.tensor.size() == 0) continue;
    Tensor t = entry.tensor;
    registry.zero_grad();
    out.push_back({entry.info.name, check_gradients(loss, t, options)});
  }
  registry.zero_grad();
  return out;
}

}  // namespace fltune
