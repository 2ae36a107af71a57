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

#include "fltune/checkpoint.hpp"
#include "fltune/params.hpp"
#include "fltune/random.hpp"
#include "test_util.hpp"

using namespace fltune;
using fltune::testing::random_tokens;
using fltune::testing::tiny_config;

namespace {

Model perturbed_model(const AdapterSpec& spec, std::uint64_t seed) {
  Model m = make_model(tiny_config(), spec, seed, seed + 1);
  ParamRegistry r = register_parameters(m);
  Rng rng(seed + 100);
  for (const auto& e : r.entries()) {
    Tensor t = e.tensor;
    for (double& v : t.mutable_data()) v += rng.normal(0.1);
  }
  return m;
}

void expect_same(const ParamRegistry& a, const ParamRegistry& b, bool trainable_only) {
  REQUIRE(a.entries().size() == b.entries().size());
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    if (trainable_only && !a.entries()[i].info.trainable) continue;
    CAPTURE(a.entries()[i].info.name);
    CHECK(bitwise_equal(a.entries()[i].tensor, b.entries()[i].tensor));
  }
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fltune_ckpt_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("full checkpoint round trip is bitwise") {
  AdapterSpec spec;
  spec.added_units = 5;
  Model source = perturbed_model(spec, 3);
  ParamRegistry from = register_parameters(source);
  const auto path = temp_path("full.flckpt");
  save_checkpoint(path.string(), from, CheckpointKind::kFull, "{\"mode\":\"fl\"}");

  Model target = make_model(tiny_config(), spec, 90, 91);
  ParamRegistry to = register_parameters(target);
  const CheckpointManifest m = load_checkpoint(path.string(), to);
  CHECK(m.kind == CheckpointKind::kFull);
  CHECK(m.version == kCheckpointVersion);
  CHECK(m.config == "{\"mode\":\"fl\"}");
  CHECK(m.tensors.size() == from.entries().size());
  expect_same(from, to, false);
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
}

TEST_CASE("adapter checkpoint stores exactly the trainable tensors") {
  AdapterSpec spec;
  spec.added_units = 5;
  Model source = perturbed_model(spec, 4);
  ParamRegistry from = register_parameters(source);
  const std::string bytes = encode_checkpoint(from, CheckpointKind::kAdapter, "{}");
  const ParamCounts counts = count_parameters(from);

  // A fresh backbone from the same seed plus the adapter reproduces the logits.
  Model target = make_model(tiny_config(), spec, 4, 77);
  ParamRegistry to = register_parameters(target);
  // The perturbation touched the backbone too; restore it so only the adapter differs.
  for (std::size_t i = 0; i < to.entries().size(); ++i) {
    if (to.entries()[i].info.trainable) continue;
    Tensor t = to.entries()[i].tensor;
    const auto src = from.entries()[i].tensor.data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
  const CheckpointManifest m = decode_checkpoint(bytes, to);
  CHECK(m.kind == CheckpointKind::kAdapter);
  CHECK(m.payload_bytes == 8 * counts.trainable);
  expect_same(from, to, true);

  Rng rng(5);
  const auto tokens = random_tokens(rng, 7, 24);
  CHECK(bitwise_equal(encoder_forward(source, tokens), encoder_forward(target, tokens)));
}

TEST_CASE("saving twice gives identical bytes") {
  AdapterSpec spec;
  spec.mode = TuningMode::kPromptV2;
  spec.prompt_length = 3;
  Model source = perturbed_model(spec, 6);
  ParamRegistry r = register_parameters(source);
  const auto a = temp_path("a.flckpt"), b = temp_path("b.flckpt");
  save_checkpoint(a.string(), r, CheckpointKind::kFull, "{}");
  save_checkpoint(b.string(), r, CheckpointKind::kFull, "{}");
  CHECK(read_file(a) == read_file(b));
  const CheckpointManifest m = read_manifest(a.string());
  CHECK(m.tensors.front().offset == 0);
  CHECK(m.tensors.back().offset + 8 * m.tensors.back().shape.size() == m.payload_bytes);
}

TEST_CASE("mismatched adapters are rejected without partial loads") {
  AdapterSpec spec;
  spec.added_units = 5;
  Model source = perturbed_model(spec, 7);
  ParamRegistry from = register_parameters(source);
  const std::string bytes = encode_checkpoint(from, CheckpointKind::kAdapter, "{}");

  AdapterSpec other = spec;
  other.added_units = 6;
  Model target = make_model(tiny_config(), other, 7, 8);
  ParamRegistry to = register_parameters(target);
  const std::uint64_t head_before = content_hash(target.backbone.head_weight);
  try {
    decode_checkpoint(bytes, to);
    FAIL("expected a shape mismatch");
  } catch (const CheckpointError& e) {
    const std::string what = e.what();
    CHECK(what.find("shape mismatch") != std::string::npos);
    CHECK(what.find("w1_prime") != std::string::npos);
  }
  CHECK(content_hash(target.backbone.head_weight) == head_before);

  AdapterSpec pv2;
  pv2.mode = TuningMode::kPromptV2;
  Model prompt_model = make_model(tiny_config(), pv2, 7, 8);
  ParamRegistry prompt_registry = register_parameters(prompt_model);
  CHECK_THROWS_AS(decode_checkpoint(bytes, prompt_registry), CheckpointError);
}

TEST_CASE("corrupt files are rejected") {
  AdapterSpec spec;
  spec.added_units = 2;
  Model source = perturbed_model(spec, 9);
  ParamRegistry r = register_parameters(source);
  const std::string bytes = encode_checkpoint(r, CheckpointKind::kAdapter, "{}");

  std::string version = bytes;
  version.replace(0, 8, "FLCKPT 2");
  CHECK_THROWS_AS(decode_checkpoint(version, r), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 8), r), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x", r), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint("not a checkpoint", r), CheckpointError);
  CHECK_THROWS_AS(read_manifest(temp_path("missing.flckpt").string()), CheckpointError);
}

TEST_CASE("zero added units round trip") {
  AdapterSpec spec;
  spec.added_units = 0;
  Model source = perturbed_model(spec, 10);
  ParamRegistry from = register_parameters(source);
  const std::string bytes = encode_checkpoint(from, CheckpointKind::kFull, "{}");
  Model target = make_model(tiny_config(), spec, 11, 12);
  ParamRegistry to = register_parameters(target);
  decode_checkpoint(bytes, to);
  expect_same(from, to, false);
}

TEST_CASE("adapter checkpoints never carry frozen tensors") {
  AdapterSpec spec;
  spec.mode = TuningMode::kAttentionExpansion;
  spec.expansion_width = 2;
  Model source = perturbed_model(spec, 13);
  ParamRegistry r = register_parameters(source);
  const std::string bytes = encode_checkpoint(r, CheckpointKind::kAdapter, "{}");
  Model target = make_model(tiny_config(), spec, 13, 14);
  ParamRegistry to = register_parameters(target);
  const CheckpointManifest m = decode_checkpoint(bytes, to);
  for (const auto& t : m.tensors) {
    const auto* e = r.find(t.name);
    REQUIRE(e != nullptr);
    CHECK(e->info.trainable);
  }
  // A full checkpoint decoded into a registry keeps every tensor.
  const std::string full = encode_checkpoint(r, CheckpointKind::kFull, "{}");
  CHECK(decode_checkpoint(full, to).tensors.size() == r.entries().size());
}
