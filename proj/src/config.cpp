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

#include "fltune/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

namespace fltune {

using nlohmann::json;

ExperimentConfig::ExperimentConfig() {
  tuning.added_units = 16;
  tuning.prompt_length = 8;
  train.epochs = 3;
  train.loss_threshold = 0.3;
  pretrain.steps = 1000;
  encoder.num_classes = task_num_classes(task);
}

void ExperimentConfig::validate() const {
  try {
    encoder.validate();
    train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (encoder.num_classes != task_num_classes(task)) {
    throw ConfigError("encoder.num_classes must equal the task's class count " +
                      std::to_string(task_num_classes(task)));
  }
  if (encoder.vocab_size < task.vocab_size) {
    throw ConfigError("encoder.vocab_size " + std::to_string(encoder.vocab_size) + " is smaller than task.vocab_size " +
                      std::to_string(task.vocab_size));
  }
  const std::size_t prompt_rows = tuning.mode == TuningMode::kPromptV1 ? tuning.prompt_length : 0;
  if (task.seq_len + prompt_rows > encoder.max_seq_len) {
    throw ConfigError("task.seq_len " + std::to_string(task.seq_len) +
                      (prompt_rows ? " plus tuning.prompt_length " + std::to_string(prompt_rows) : std::string()) +
                      " exceeds encoder.max_seq_len " + std::to_string(encoder.max_seq_len));
  }
  for (std::size_t l : tuning.layers) {
    if (l >= encoder.num_layers) {
      throw ConfigError("tuning.layers entry " + std::to_string(l) + " outside encoder of " +
                        std::to_string(encoder.num_layers) + " layers");
    }
  }
  if (tuning.split_index && *tuning.split_index > encoder.ffn_dim) {
    throw ConfigError("tuning.split_index exceeds encoder.ffn_dim");
  }
}

json to_json(const EncoderConfig& c) {
  return {{"model_dim", c.model_dim},       {"num_heads", c.num_heads},   {"head_key_dim", c.head_key_dim},
          {"head_value_dim", c.head_value_dim}, {"ffn_dim", c.ffn_dim},   {"num_layers", c.num_layers},
          {"vocab_size", c.vocab_size},     {"max_seq_len", c.max_seq_len}, {"num_classes", c.num_classes},
          {"init_std", c.init_std},         {"layer_norm_eps", c.layer_norm_eps}};
}

json to_json(const AdapterSpec& s) {
  return {{"mode", to_string(s.mode)},
          {"added_units", s.added_units},
          {"position", to_string(s.position)},
          {"split_index", s.split_index ? json(*s.split_index) : json(nullptr)},
          {"prompt_length", s.prompt_length},
          {"expansion_width", s.expansion_width},
          {"layers", s.layers},
          {"init_std", s.init_std}};
}

json to_json(const TaskSpec& s) {
  return {{"kind", to_string(s.kind)},     {"vocab_size", s.vocab_size}, {"seq_len", s.seq_len},
          {"num_classes", s.num_classes},  {"train_size", s.train_size}, {"dev_size", s.dev_size},
          {"test_size", s.test_size},      {"seed", s.seed}};
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"max_steps", c.max_steps},
          {"optimizer", to_string(c.optimizer)}, {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"adam_eps", c.adam_eps},
          {"smoothing_alpha", c.smoothing_alpha}, {"loss_threshold", c.loss_threshold}};
}

json to_json(const PretrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"mask_rate", c.mask_rate},
          {"seed", c.seed}};
}

json to_json(const ExperimentConfig& c) {
  json encoder = to_json(c.encoder);
  encoder.erase("num_classes");
  return {{"encoder", encoder},          {"tuning", to_json(c.tuning)},     {"task", to_json(c.task)},
          {"train", to_json(c.train)},   {"pretrain", to_json(c.pretrain)}, {"output_dir", c.output_dir},
          {"seed", c.seed}};
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Reads keys of one JSON object and rejects any key never asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* value(const std::string& key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, std::size_t& out) {
    if (const json* v = value(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(join(path_, key) + ": expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::uint64_t& out, int) {
    if (const json* v = value(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(join(path_, key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = value(key)) {
      if (!v->is_number()) throw ConfigError(join(path_, key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = value(key)) {
      if (!v->is_string()) throw ConfigError(join(path_, key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  template <class Enum, class Parse>
  void read_enum(const std::string& key, Enum& out, Parse parse) {
    std::string name;
    read(key, name);
    if (name.empty() && !has(key)) return;
    try {
      out = parse(name);
    } catch (const std::exception& e) {
      throw ConfigError(join(path_, key) + ": " + e.what());
    }
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!known_.count(key)) throw ConfigError("unknown key '" + join(path_, key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

void read_encoder(const json& j, EncoderConfig& c) {
  Section s(j, "encoder");
  std::string preset;
  s.read("preset", preset);
  if (preset == "roberta-base") {
    c = EncoderConfig::roberta_base();
  } else if (!preset.empty() && preset != "desk") {
    throw ConfigError("encoder.preset: unknown preset '" + preset + "' (expected desk or roberta-base)");
  }
  s.read("model_dim", c.model_dim);
  s.read("num_heads", c.num_heads);
  s.read("head_key_dim", c.head_key_dim);
  s.read("head_value_dim", c.head_value_dim);
  s.read("ffn_dim", c.ffn_dim);
  s.read("num_layers", c.num_layers);
  s.read("vocab_size", c.vocab_size);
  s.read("max_seq_len", c.max_seq_len);
  s.read("init_std", c.init_std);
  s.read("layer_norm_eps", c.layer_norm_eps);
  s.finish();
}

void read_tuning(const json& j, AdapterSpec& a) {
  Section s(j, "tuning");
  s.read_enum("mode", a.mode, parse_tuning_mode);
  s.read("added_units", a.added_units);
  s.read_enum("position", a.position, parse_insert_position);
  if (const json* v = s.value("split_index")) {
    if (v->is_null()) {
      a.split_index.reset();
    } else if (v->is_number_unsigned()) {
      a.split_index = v->get<std::size_t>();
    } else {
      throw ConfigError("tuning.split_index: expected a non-negative integer or null");
    }
  }
  s.read("prompt_length", a.prompt_length);
  s.read("expansion_width", a.expansion_width);
  if (const json* v = s.value("layers")) {
    if (!v->is_array()) throw ConfigError("tuning.layers: expected an array of layer indices");
    a.layers.clear();
    for (const auto& e : *v) {
      if (!e.is_number_unsigned()) throw ConfigError("tuning.layers: expected non-negative integers");
      a.layers.push_back(e.get<std::size_t>());
    }
  }
  s.read("init_std", a.init_std);
  s.finish();
}

void read_task(const json& j, TaskSpec& t) {
  Section s(j, "task");
  s.read_enum("kind", t.kind, parse_task_kind);
  s.read("vocab_size", t.vocab_size);
  s.read("seq_len", t.seq_len);
  s.read("num_classes", t.num_classes);
  s.read("train_size", t.train_size);
  s.read("dev_size", t.dev_size);
  s.read("test_size", t.test_size);
  s.read("seed", t.seed, 0);
  s.finish();
}

void read_train(const json& j, TrainConfig& c) {
  Section s(j, "train");
  s.read("learning_rate", c.learning_rate);
  s.read("batch_size", c.batch_size);
  s.read("epochs", c.epochs);
  s.read("max_steps", c.max_steps);
  s.read_enum("optimizer", c.optimizer, parse_optimizer_kind);
  s.read("beta1", c.beta1);
  s.read("beta2", c.beta2);
  s.read("adam_eps", c.adam_eps);
  s.read("smoothing_alpha", c.smoothing_alpha);
  s.read("loss_threshold", c.loss_threshold);
  s.finish();
}

void read_pretrain(const json& j, PretrainConfig& c) {
  Section s(j, "pretrain");
  s.read("steps", c.steps);
  s.read("batch_size", c.batch_size);
  s.read("learning_rate", c.learning_rate);
  s.read("mask_rate", c.mask_rate);
  s.read("seed", c.seed, 0);
  s.finish();
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section s(j, "");
  if (const json* v = s.value("encoder")) read_encoder(*v, c.encoder);
  if (const json* v = s.value("tuning")) read_tuning(*v, c.tuning);
  if (const json* v = s.value("task")) read_task(*v, c.task);
  if (const json* v = s.value("train")) read_train(*v, c.train);
  if (const json* v = s.value("pretrain")) read_pretrain(*v, c.pretrain);
  s.read("output_dir", c.output_dir);
  s.read("seed", c.seed, 0);
  s.finish();
  c.encoder.num_classes = task_num_classes(c.task);
  c.train.seed = c.seed;
  c.validate();
  return c;
}

json parse_json_text(std::string_view text, std::string_view source) {
  try {
    return json::parse(text.begin(), text.end(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    // Keep nlohmann's description, drop its own position prefix.
    const std::string what = e.what();
    const auto column = what.find("column");
    const auto detail = column == std::string::npos ? std::string::npos : what.find(": ", column);
    throw ConfigError(std::string(source) + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                      (detail == std::string::npos ? what : what.substr(detail + 2)));
  }
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  return config_from_json(parse_json_text(text, source));
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &j;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    json& child = (*node)[path[i]];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override '" + key + "': '" + path[i] + "' is not a section");
    node = &child;
  }
  (*node)[path.back()] = value;
}

}  // namespace fltune
