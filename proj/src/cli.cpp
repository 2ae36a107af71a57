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

#include "fltune/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fltune/checkpoint.hpp"
#include "fltune/config.hpp"
#include "fltune/experiment.hpp"
#include "fltune/tuning.hpp"

namespace fltune {

using nlohmann::json;

namespace {

/// Options shared by every command that reads an experiment config.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
  std::string mode;
  std::string output_dir;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", path, "JSON experiment config (defaults to the built-in desk config)");
    app.add_option("--set", overrides, "Override a config value, e.g. --set train.learning_rate=0.01");
    app.add_option("--mode", mode, "Tuning mode: frozen, finetune, fl, pv1, pv2, ma");
    app.add_option("--output-dir", output_dir, "Run directory (overrides output_dir)");
    app.add_option("--seed", seed, "Experiment seed (overrides seed)");
  }

  ExperimentConfig load() const {
    json j = json::object();
    std::string source = "<defaults>";
    if (!path.empty()) {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw ConfigError(path + ": cannot open config file");
      std::stringstream buffer;
      buffer << in.rdbuf();
      j = parse_json_text(buffer.str(), path);
      source = path;
    }
    for (const auto& o : overrides) apply_override(j, o);
    if (!mode.empty()) apply_override(j, "tuning.mode=\"" + mode + "\"");
    if (!output_dir.empty()) j["output_dir"] = output_dir;
    if (seed) j["seed"] = *seed;
    try {
      return config_from_json(j);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": " + e.what());
    }
  }
};

std::string format_sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(3) << v;
  return s.str();
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

int cmd_verify(std::size_t trials, double tolerance, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  if (trials == 0) {
    err << "verify: --trials must be at least 1\n";
    return kExitUsage;
  }
  if (!(tolerance >= 0.0)) {
    err << "verify: --tolerance must be non-negative\n";
    return kExitUsage;
  }
  const TrialShapes shapes;
  bool ok = true;
  const auto report = [&](const EquivalenceReport& r, double ms) {
    ok = ok && r.passed();
    out << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(42) << r.name << " trials=" << r.trials
        << " failures=" << r.failures << " max_deviation=" << format_sci(r.max_deviation)
        << " tolerance=" << format_sci(r.tolerance) << " time_ms=" << std::fixed << std::setprecision(1) << ms
        << std::defaultfloat << '\n';
  };
  const auto timed = [&](auto check) {
    const auto start = std::chrono::steady_clock::now();
    const EquivalenceReport r = check();
    report(r, elapsed_ms(start));
  };
  timed([&] { return verify_theorem1(shapes, trials, tolerance, seed); });
  timed([&] { return verify_theorem2(shapes, trials, tolerance, seed + 1); });
  timed([&] { return verify_prefix_normalization(trials, tolerance, seed + 2); });
  timed([&] { return verify_attention_expansion(trials, tolerance, seed + 3); });
  out << (ok ? "all checks passed\n" : "some checks failed\n");
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_gradcheck(const ExperimentConfig& config, double threshold, const GradCheckOptions& options,
                  std::ostream& out) {
  const auto errors = gradcheck_experiment(config, options);
  double worst = 0.0;
  std::size_t breaches = 0;
  for (const auto& e : errors) {
    const bool pass = e.error < threshold;
    breaches += pass ? 0 : 1;
    worst = std::max(worst, e.error);
    out << (pass ? "PASS " : "FAIL ") << std::left << std::setw(36) << e.name << ' ' << format_sci(e.error) << '\n';
  }
  out << "mode=" << to_string(config.tuning.mode) << " tensors=" << errors.size() << " max_rel_error="
      << format_sci(worst) << " threshold=" << format_sci(threshold) << '\n';
  return breaches == 0 ? kExitOk : kExitCheckFailed;
}

int cmd_params(const ExperimentConfig& config, bool as_json, std::ostream& out) {
  constexpr TuningMode kModes[] = {TuningMode::kFrozen,   TuningMode::kFineTune, TuningMode::kAddFFN,
                                   TuningMode::kPromptV1, TuningMode::kPromptV2, TuningMode::kAttentionExpansion};
  json rows = json::array();
  for (TuningMode mode : kModes) {
    AdapterSpec spec = config.tuning;
    spec.mode = mode;
    const ParamCounts c = count_parameters(describe_parameters(config.encoder, spec));
    json row = to_json(c);
    row["mode"] = to_string(mode);
    rows.push_back(row);
  }
  AdapterSpec frozen = config.tuning;
  frozen.mode = TuningMode::kFrozen;
  const LayerBreakdown layer = layer_breakdown(describe_parameters(config.encoder, frozen));

  if (as_json) {
    json encoder = to_json(config.encoder);
    json doc = {{"encoder", encoder},
                {"tuning", to_json(config.tuning)},
                {"configured_mode", to_string(config.tuning.mode)},
                {"layer", {{"attention", layer.attention},
                           {"ffn", layer.ffn},
                           {"layer_norm", layer.layer_norm},
                           {"total", layer.total()},
                           {"ffn_share", layer.ffn_share()}}},
                {"modes", rows}};
    out << doc.dump(2) << '\n';
    return kExitOk;
  }
  const auto& e = config.encoder;
  out << "shape: model_dim=" << e.model_dim << " heads=" << e.num_heads << " ffn_dim=" << e.ffn_dim
      << " layers=" << e.num_layers << " vocab=" << e.vocab_size << '\n';
  out << "per layer: attention=" << layer.attention << " ffn=" << layer.ffn << " layer_norm=" << layer.layer_norm
      << " ffn_share=" << std::fixed << std::setprecision(4) << layer.ffn_share() << std::defaultfloat << "\n\n";
  out << std::left << std::setw(10) << "mode" << std::right << std::setw(14) << "total" << std::setw(14)
      << "trainable" << std::setw(11) << "fraction" << std::setw(12) << "adapter" << std::setw(16)
      << "block_fraction" << '\n';
  for (const auto& row : rows) {
    out << std::left << std::setw(10) << row["mode"].get<std::string>() << std::right << std::setw(14)
        << row["total"].get<std::size_t>() << std::setw(14) << row["trainable"].get<std::size_t>() << std::setw(11)
        << std::fixed << std::setprecision(6) << row["fraction"].get<double>() << std::setw(12)
        << row["adapter"].get<std::size_t>() << std::setw(16) << row["block_fraction"].get<double>()
        << std::defaultfloat << '\n';
  }
  return kExitOk;
}

void print_run(const RunResult& run, const std::filesystem::path& dir, std::ostream& out) {
  const auto& m = run.metrics;
  out << "steps=" << m.steps.size() << " train_acc=" << m.final_train.accuracy << " dev_acc=" << m.final_dev.accuracy;
  if (m.final_dev.f1) out << " dev_f1=" << *m.final_dev.f1;
  out << " test_acc=" << run.test.accuracy;
  if (run.test.f1) out << " test_f1=" << *run.test.f1;
  out << " steps_to_threshold=";
  if (m.steps_to_threshold) {
    out << *m.steps_to_threshold;
  } else {
    out << "none";
  }
  out << " trainable=" << run.counts.trainable << " fraction=" << run.counts.fraction << '\n';
  out << "wrote " << (dir / "metrics.csv").string() << ", " << (dir / "summary.json").string() << ", "
      << (dir / "adapter.flckpt").string() << '\n';
}

int cmd_train(const ExperimentConfig& config, std::ostream& out) {
  Experiment e = build_experiment(config);
  const auto dir = resolve_output_dir(config);
  const RunResult run = run_training(e, dir);
  print_run(run, dir, out);
  return kExitOk;
}

int cmd_fewshot(const ExperimentConfig& config, const std::vector<std::size_t>& sizes, std::ostream& out) {
  const auto dir = resolve_output_dir(config);
  const FewshotResult result = run_fewshot(config, sizes, dir);
  for (std::size_t k = 0; k < result.sizes.size(); ++k) {
    out << "size=" << result.sizes[k] << ' ';
    print_run(result.runs[k], dir / ("size_" + std::to_string(result.sizes[k])), out);
  }
  out << "wrote " << (dir / "fewshot_summary.json").string() << '\n';
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& config, const std::string& checkpoint, const std::string& split,
             std::ostream& out) {
  Experiment e = build_experiment(config);
  ParamRegistry registry = register_parameters(e.model);
  const std::string path =
      checkpoint.empty() ? (resolve_output_dir(config) / "adapter.flckpt").string() : checkpoint;
  const CheckpointManifest manifest = load_checkpoint(path, registry);
  const std::vector<Example>* examples = &e.task.dev;
  if (split == "train") examples = &e.task.train;
  if (split == "test") examples = &e.task.test;
  const EvalResult r = evaluate(e.model, *examples, e.task.spec);
  json doc = {{"checkpoint", path},
              {"kind", to_string(manifest.kind)},
              {"split", split},
              {"examples", examples->size()},
              {"result", to_json(r)}};
  out << doc.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fltune: feed-forward layer tuning experiments on a desk-scale Transformer encoder"};
  app.name(args.empty() ? "fltune" : args[0]);
  app.require_subcommand(1);

  std::size_t trials = 200;
  double tolerance = 1e-12;
  std::uint64_t verify_seed = 2024;
  auto* verify = app.add_subcommand("verify", "Check split/concat and position equivalences of the widened FFN");
  verify->add_option("--trials", trials, "Random instances per check")->capture_default_str();
  verify->add_option("--tolerance", tolerance, "Max allowed deviation")->capture_default_str();
  verify->add_option("--seed", verify_seed, "RNG seed")->capture_default_str();

  ConfigOptions gradcheck_opts;
  double threshold = 1e-4;
  GradCheckOptions grad_options;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every trainable tensor");
  gradcheck_opts.attach(*gradcheck);
  gradcheck->add_option("--threshold", threshold, "Max allowed relative error")->capture_default_str();
  gradcheck->add_option("--eps", grad_options.eps, "Finite-difference step")->capture_default_str();
  gradcheck->add_option("--coordinates", grad_options.max_coordinates, "Sampled coordinates per tensor")
      ->capture_default_str();

  ConfigOptions params_opts;
  bool params_json = false;
  auto* params = app.add_subcommand("params", "Parameter counts for every tuning mode at the configured shape");
  params_opts.attach(*params);
  params->add_flag("--json", params_json, "Machine-readable output");

  ConfigOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train one run and write metrics, summary and adapter checkpoint");
  train_opts.attach(*train_cmd);

  ConfigOptions fewshot_opts;
  std::vector<std::size_t> sizes{20, 40, 60, 80, 100};
  auto* fewshot = app.add_subcommand("fewshot", "One run per training-set size on nested stratified subsets");
  fewshot_opts.attach(*fewshot);
  fewshot->add_option("--sizes", sizes, "Training-set sizes")->delimiter(',')->capture_default_str();

  ConfigOptions eval_opts;
  std::string checkpoint, split = "dev";
  auto* eval = app.add_subcommand("eval", "Evaluate a saved adapter checkpoint");
  eval_opts.attach(*eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path (defaults to <run dir>/adapter.flckpt)");
  eval->add_option("--split", split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}))
      ->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("fltune");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (verify->parsed()) return cmd_verify(trials, tolerance, verify_seed, out, err);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_opts.load(), threshold, grad_options, out);
    if (params->parsed()) return cmd_params(params_opts.load(), params_json, out);
    if (train_cmd->parsed()) return cmd_train(train_opts.load(), out);
    if (fewshot->parsed()) return cmd_fewshot(fewshot_opts.load(), sizes, out);
    if (eval->parsed()) return cmd_eval(eval_opts.load(), checkpoint, split, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "invalid request: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "invalid request: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace fltune
