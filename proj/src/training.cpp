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

#include "fltune/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "fltune/autograd.hpp"
#include "fltune/random.hpp"

namespace fltune {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(smoothing_alpha >= 0.0 && smoothing_alpha < 1.0)) {
    throw std::invalid_argument("smoothing_alpha must lie in [0, 1)");
  }
}

OptimizerConfig TrainConfig::optimizer_config() const {
  return {optimizer, learning_rate, beta1, beta2, adam_eps};
}

namespace {

// 1 - alpha rounded to 15 significant digits, so alpha = 0.99 weighs the new
// loss by exactly 0.01 rather than 0.010000000000000009.
double decimal_complement(double alpha) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, 1.0 - alpha, std::chars_format::general, 15).ptr;
  double out = 0.0;
  std::from_chars(buf, end, out);
  return out;
}

}  // namespace

double smooth_loss(double previous_smoothed, double current, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("smoothing alpha must lie in [0, 1)");
  return alpha * previous_smoothed + decimal_complement(alpha) * current;
}

std::optional<std::size_t> steps_to_threshold(std::span<const double> smoothed, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("threshold must be positive");
  for (std::size_t i = 0; i < smoothed.size(); ++i)
    if (smoothed[i] <= threshold) return i + 1;
  return std::nullopt;
}

std::optional<std::size_t> steps_to_threshold(const RunMetrics& metrics, double threshold) {
  std::vector<double> smoothed;
  smoothed.reserve(metrics.steps.size());
  for (const auto& s : metrics.steps) smoothed.push_back(s.smoothed_loss);
  return steps_to_threshold(smoothed, threshold);
}

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

EvalResult evaluate(const Model& model, std::span<const Example> examples, const TaskSpec& spec) {
  NoGradScope no_grad;
  const OutputKind kind = task_output_kind(spec);
  std::size_t correct = 0, total = 0;
  SpanCounts spans;
  for (const auto& ex : examples) {
    const auto predicted = argmax_rows(encoder_forward(model, ex.tokens, kind));
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == ex.labels[i] ? 1 : 0;
    total += predicted.size();
    if (spec.kind == TaskKind::kTagging) accumulate_spans(ex.labels, predicted, spans);
  }
  EvalResult result;
  result.accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  if (spec.kind == TaskKind::kTagging) result.f1 = spans.f1();
  return result;
}

RunMetrics train(Model& model, ParamRegistry& registry, const SyntheticTask& task, const TrainConfig& config) {
  config.validate();
  RunMetrics metrics;
  if (config.epochs == 0 || task.train.empty()) return metrics;

  const OutputKind kind = task_output_kind(task.spec);
  Optimizer optimizer(registry.trainable_tensors(), config.optimizer_config());
  Rng rng(config.seed);
  std::vector<std::size_t> order(task.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto start = std::chrono::steady_clock::now();
  std::size_t step = 0;
  double smoothed = 0.0;
  bool capped = false;
  for (std::size_t epoch = 1; epoch <= config.epochs && !capped; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      if (config.max_steps != 0 && step >= config.max_steps) {
        capped = true;
        break;
      }
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      registry.zero_grad();
      Tape tape;
      TapeScope scope(tape);
      Tensor total;
      std::size_t correct = 0, predictions = 0;
      for (std::size_t k = begin; k < end; ++k) {
        const Example& ex = task.train[order[k]];
        const Tensor logits = encoder_forward(model, ex.tokens, kind);
        const Tensor loss = cross_entropy(logits, ex.labels);
        total = k == begin ? loss : add(total, loss);
        const auto predicted = argmax_rows(logits);
        for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == ex.labels[i] ? 1 : 0;
        predictions += predicted.size();
      }
      const Tensor loss = scale(total, 1.0 / static_cast<double>(end - begin));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingDiverged("loss became non-finite at step " + std::to_string(step + 1) + " (epoch " +
                               std::to_string(epoch) + ")");
      }
      if (loss.requires_grad()) tape.backward(loss);
      optimizer.step();
      ++step;

      smoothed = step == 1 ? value : smooth_loss(smoothed, value, config.smoothing_alpha);
      const double elapsed =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      metrics.steps.push_back({step, value, smoothed,
                               static_cast<double>(correct) / static_cast<double>(predictions), elapsed});
    }
    if (!task.dev.empty()) metrics.epochs.push_back({epoch, step, evaluate(model, task.dev, task.spec)});
  }
  registry.zero_grad();

  metrics.final_train = evaluate(model, task.train, task.spec);
  if (!task.dev.empty()) metrics.final_dev = evaluate(model, task.dev, task.spec);
  if (config.loss_threshold > 0.0) metrics.steps_to_threshold = steps_to_threshold(metrics, config.loss_threshold);
  return metrics;
}

int example_stratum(const TaskSpec& spec, const Example& example) {
  if (spec.kind == TaskKind::kTagging) {
    return static_cast<int>(std::min<std::size_t>(tag_spans(example.labels).size(), 3));
  }
  return example.labels.at(0);
}

std::vector<std::size_t> stratified_order(const SyntheticTask& task, std::uint64_t seed) {
  const std::size_t n = task.train.size();
  int max_stratum = 0;
  for (const auto& ex : task.train) max_stratum = std::max(max_stratum, example_stratum(task.spec, ex));
  std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(max_stratum) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    pools[static_cast<std::size_t>(example_stratum(task.spec, task.train[i]))].push_back(i);
  }
  Rng rng(seed);
  for (auto& pool : pools) rng.shuffle(pool);

  // Repeatedly take from the stratum furthest below its proportional share.
  std::vector<std::size_t> taken(pools.size(), 0);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t best = pools.size();
    double best_deficit = 0.0;
    for (std::size_t c = 0; c < pools.size(); ++c) {
      if (taken[c] == pools[c].size()) continue;
      const double share = static_cast<double>(pools[c].size()) / static_cast<double>(n);
      const double deficit = static_cast<double>(s + 1) * share - static_cast<double>(taken[c]);
      if (best == pools.size() || deficit > best_deficit) {
        best = c;
        best_deficit = deficit;
      }
    }
    order.push_back(pools[best][taken[best]++]);
  }
  return order;
}

std::vector<std::vector<std::size_t>> fewshot_indices(const SyntheticTask& task, std::span<const std::size_t> sizes,
                                                      std::uint64_t seed) {
  for (std::size_t size : sizes) {
    if (size > task.train.size()) {
      throw ContractError("few-shot size " + std::to_string(size) + " exceeds training pool of " +
                          std::to_string(task.train.size()));
    }
  }
  const auto order = stratified_order(task, seed);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t size : sizes) {
    std::vector<std::size_t> subset(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size));
    std::sort(subset.begin(), subset.end());
    out.push_back(std::move(subset));
  }
  return out;
}

std::vector<SyntheticTask> fewshot_subsample(const SyntheticTask& task, std::span<const std::size_t> sizes,
                                             std::uint64_t seed) {
  std::vector<SyntheticTask> out;
  for (const auto& indices : fewshot_indices(task, sizes, seed)) {
    SyntheticTask sub;
    sub.spec = task.spec;
    sub.spec.train_size = indices.size();
    for (std::size_t i : indices) sub.train.push_back(task.train[i]);
    sub.dev = task.dev;
    sub.test = task.test;
    out.push_back(std::move(sub));
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw std::runtime_error("malformed number '" + std::string(text) + "' in metrics CSV");
  }
  return v;
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const StepRecord> steps) {
  out << "step,loss,smoothed_loss,accuracy,wallclock_ms\n";
  for (const auto& s : steps) {
    out << s.step << ',' << format_double(s.loss) << ',' << format_double(s.smoothed_loss) << ','
        << format_double(s.accuracy) << ',' << format_double(s.wallclock_ms) << '\n';
  }
}

std::vector<StepRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "step,loss,smoothed_loss,accuracy,wallclock_ms") {
    throw std::runtime_error("metrics CSV has an unexpected header");
  }
  std::vector<StepRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 5) throw std::runtime_error("metrics CSV row has " + std::to_string(fields.size()) + " fields");
    StepRecord r;
    r.step = static_cast<std::size_t>(parse_double(fields[0]));
    r.loss = parse_double(fields[1]);
    r.smoothed_loss = parse_double(fields[2]);
    r.accuracy = parse_double(fields[3]);
    r.wallclock_ms = parse_double(fields[4]);
    out.push_back(r);
  }
  return out;
}

}  // namespace fltune
