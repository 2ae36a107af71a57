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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fltune/cli.hpp"
#include "fltune/config.hpp"
#include "fltune/experiment.hpp"

using namespace fltune;
using nlohmann::json;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fltune");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fltune_cli_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small enough to train in well under a second.
const std::vector<std::string> kSmall = {"--set", "task.train_size=64",  "--set", "task.dev_size=16",
                                         "--set", "task.test_size=16",   "--set", "pretrain.steps=2",
                                         "--set", "train.epochs=1",      "--set", "train.batch_size=16",
                                         "--set", "encoder.model_dim=16", "--set", "encoder.ffn_dim=32",
                                         "--set", "encoder.num_heads=2"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

std::string strip_wallclock(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

}  // namespace

TEST_CASE("default config is valid and echoes back") {
  const ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.adapter_seed() == c.backbone_seed() + 1);
  const ExperimentConfig back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.encoder.num_classes == task_num_classes(back.task));
}

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config(R"({
    // comments are allowed
    "tuning": {"mode": "pv2", "prompt_length": 4},
    "train": {"learning_rate": 0.01},
    "seed": 9
  })");
  CHECK(c.tuning.mode == TuningMode::kPromptV2);
  CHECK(c.tuning.prompt_length == 4);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.seed == 9);

  const ExperimentConfig roberta = parse_config(R"({"encoder": {"preset": "roberta-base"}, "task": {"vocab_size": 64}})");
  CHECK(roberta.encoder.model_dim == 768);

  SUBCASE("unknown keys name their path") {
    try {
      parse_config(R"({"train": {"learning_rat": 0.1}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.learning_rat") != std::string::npos);
    }
  }
  SUBCASE("syntax errors carry line and column") {
    try {
      parse_config("{\n  \"seed\": ,\n}", "bad.json");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).rfind("bad.json:2:", 0) == 0);
    }
  }
  SUBCASE("type errors and invalid values") {
    CHECK_THROWS_AS(parse_config(R"({"train": {"epochs": "three"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"tuning": {"mode": "lora"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"train": {"learning_rate": -1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"encoder": {"preset": "gpt"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"tuning": {"mode": "pv1", "prompt_length": 30}})"), ConfigError);
  }
}

TEST_CASE("overrides") {
  json j = json::object();
  apply_override(j, "train.learning_rate=0.5");
  apply_override(j, "tuning.mode=fl");
  apply_override(j, "tuning.layers=[0]");
  CHECK(j["train"]["learning_rate"] == 0.5);
  CHECK(j["tuning"]["mode"] == "fl");
  CHECK(j["tuning"]["layers"] == json::array({0}));
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST_CASE("output directory resolution") {
  ExperimentConfig c;
  c.seed = 4;
  c.output_dir = "explicit";
  CHECK(resolve_output_dir(c) == std::filesystem::path("explicit"));
  c.output_dir.clear();
  CHECK(resolve_output_dir(c).filename() == "fl-seed4");
}

TEST_CASE("cli verify exit codes") {
  const CliRun ok = cli({"verify", "--trials", "20"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  CHECK(cli({"verify", "--trials", "20", "--tolerance", "1e-30"}).code == kExitCheckFailed);
  CHECK(cli({"verify", "--trials", "0"}).code == kExitUsage);
  CHECK(cli({"verify", "--bogus"}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
}

TEST_CASE("cli params") {
  const CliRun r = cli({"params", "--json", "--set", "encoder.preset=\"roberta-base\"", "--set",
                        "tuning.added_units=160"});
  REQUIRE(r.code == kExitOk);
  const json doc = json::parse(r.out);
  bool found = false;
  for (const auto& row : doc["modes"]) {
    if (row["mode"] == "fl") {
      found = true;
      CHECK(row["adapter"] == 2951040);
    }
  }
  CHECK(found);
  CHECK(doc["modes"].size() == 6);
  CHECK(cli({"params"}).code == kExitOk);
  CHECK(cli({"params", "--set", "train.nope=1"}).code == kExitUsage);
}

TEST_CASE("cli gradcheck") {
  const CliRun ok = cli({"gradcheck", "--set", "encoder.model_dim=8", "--set", "encoder.ffn_dim=16", "--set",
                         "encoder.num_heads=2", "--set", "tuning.added_units=3", "--set", "task.vocab_size=24",
                         "--set", "task.seq_len=6", "--set", "pretrain.steps=0"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("max_rel_error") != std::string::npos);
  const CliRun big = cli({"gradcheck", "--set", "encoder.model_dim=40"});
  CHECK(big.code == kExitUsage);
  CHECK(big.err.find("config error") != std::string::npos);
}

TEST_CASE("cli train, eval and determinism") {
  // The config echo records the run directory, so both runs share it.
  const auto a = scratch("train_a");
  REQUIRE(cli(with_small({"train", "--output-dir", a.string()})).code == kExitOk);
  for (const char* f : {"metrics.csv", "summary.json", "adapter.flckpt"}) REQUIRE(std::filesystem::exists(a / f));
  const std::string metrics = read_file(a / "metrics.csv"), summary_text = read_file(a / "summary.json"),
                    adapter = read_file(a / "adapter.flckpt");
  REQUIRE(cli(with_small({"train", "--output-dir", a.string()})).code == kExitOk);
  CHECK(strip_wallclock(read_file(a / "metrics.csv")) == strip_wallclock(metrics));
  CHECK(read_file(a / "summary.json") == summary_text);
  CHECK(read_file(a / "adapter.flckpt") == adapter);

  const json summary = json::parse(read_file(a / "summary.json"));
  CHECK(summary["mode"] == "fl");
  CHECK(summary["steps"] == 4);
  CHECK(summary.contains("parameters"));
  CHECK(summary.contains("config"));

  const CliRun eval = cli(with_small({"eval", "--output-dir", a.string(), "--split", "test"}));
  REQUIRE(eval.code == kExitOk);
  const json doc = json::parse(eval.out);
  CHECK(doc["kind"] == "adapter");
  CHECK(doc["result"]["accuracy"] == summary["test"]["accuracy"]);

  const CliRun mismatch =
      cli(with_small({"eval", "--output-dir", a.string(), "--set", "tuning.added_units=3"}));
  CHECK(mismatch.code == kExitCheckFailed);
  CHECK(mismatch.err.find("shape mismatch") != std::string::npos);
}

TEST_CASE("cli fewshot writes one summary per size") {
  const auto dir = scratch("fewshot");
  const CliRun r = cli(with_small({"fewshot", "--output-dir", dir.string(), "--sizes", "8,16,24,32,40"}));
  REQUIRE(r.code == kExitOk);
  for (int n : {8, 16, 24, 32, 40}) {
    CHECK(std::filesystem::exists(dir / ("size_" + std::to_string(n)) / "summary.json"));
  }
  const json summary = json::parse(read_file(dir / "fewshot_summary.json"));
  CHECK(summary["sizes"].size() == 5);
  CHECK(cli(with_small({"fewshot", "--output-dir", dir.string(), "--sizes", "65"})).code == kExitUsage);
}
