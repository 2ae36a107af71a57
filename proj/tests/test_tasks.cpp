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

#include <set>
#include <sstream>
#include <string>

#include "fltune/autograd.hpp"
#include "fltune/params.hpp"
#include "fltune/tasks.hpp"
#include "fltune/training.hpp"

using namespace fltune;

namespace {

std::string key(const Example& ex) {
  std::string k;
  for (int t : ex.tokens) k += std::to_string(t) + ",";
  return k;
}

/// Sum of the one-hot rows selected by `tokens`: 1 x classes.
Tensor sum_rows_probe(const Tensor& w, const std::vector<int>& tokens) {
  return matmul(Tensor(1, tokens.size(), 1.0), gather_rows(w, tokens));
}

}  // namespace

TEST_CASE("every stored label matches the oracle and splits are disjoint") {
  for (TaskKind kind : {TaskKind::kClassification, TaskKind::kSentencePair, TaskKind::kTagging}) {
    CAPTURE(to_string(kind));
    TaskSpec spec;
    spec.kind = kind;
    spec.train_size = 400;
    spec.dev_size = 100;
    spec.test_size = 100;
    const SyntheticTask task = generate_task(spec);
    CHECK(task.train.size() == 400);
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* split : {&task.train, &task.dev, &task.test}) {
      for (const auto& ex : *split) {
        CHECK(ex.tokens.size() == spec.seq_len);
        CHECK(oracle_labels(spec, ex.tokens) == ex.labels);
        for (int t : ex.tokens) {
          CHECK(t >= 0);
          CHECK(t < static_cast<int>(spec.vocab_size));
        }
        seen.insert(key(ex));
        ++total;
      }
    }
    CHECK(seen.size() == total);
  }
}

TEST_CASE("generation is a pure function of the seed") {
  TaskSpec spec;
  spec.train_size = 50;
  spec.dev_size = 10;
  spec.test_size = 10;
  const SyntheticTask a = generate_task(spec), b = generate_task(spec);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  spec.seed += 1;
  CHECK_FALSE(generate_task(spec).train == a.train);
}

TEST_CASE("labels cover every class") {
  TaskSpec spec;
  spec.num_classes = 4;
  spec.train_size = 400;
  const SyntheticTask task = generate_task(spec);
  std::set<int> labels;
  for (const auto& ex : task.train) labels.insert(ex.labels[0]);
  CHECK(labels.size() == 4);
  CHECK(task_num_classes(spec) == 4);
  spec.kind = TaskKind::kSentencePair;
  CHECK(task_num_classes(spec) == 2);
  spec.kind = TaskKind::kTagging;
  CHECK(task_num_classes(spec) == 3);
  CHECK(task_output_kind(spec) == OutputKind::kPerToken);
}

TEST_CASE("generator contract errors") {
  TaskSpec spec;
  spec.vocab_size = 8;
  CHECK_THROWS_AS(generate_task(spec), ContractError);
  spec = TaskSpec{};
  spec.train_size = 0;
  CHECK_THROWS_AS(generate_task(spec), ContractError);
  spec = TaskSpec{};
  spec.kind = TaskKind::kSentencePair;
  spec.seq_len = 3;
  CHECK_THROWS_AS(generate_task(spec), ContractError);
  spec = TaskSpec{};
  spec.seq_len = 2;
  spec.train_size = 5000;
  CHECK_THROWS_AS(generate_task(spec), ContractError);
  CHECK_THROWS_AS(parse_task_kind("nli"), std::invalid_argument);
}

TEST_CASE("a linear probe on token embeddings learns the classification rule") {
  // Bag-of-embeddings logistic regression with one-hot embeddings: the
  // simplest learner that can only succeed if labels follow from markers.
  TaskSpec spec;
  spec.train_size = 1000;
  spec.dev_size = 300;
  const SyntheticTask task = generate_task(spec);
  Tensor w(spec.vocab_size, spec.num_classes);
  w.set_requires_grad(true);
  for (int epoch = 0; epoch < 5; ++epoch) {
    for (const auto& ex : task.train) {
      Tape tape;
      TapeScope scope(tape);
      const Tensor logits = sum_rows_probe(w, ex.tokens);
      tape.backward(cross_entropy(logits, ex.labels));
      auto g = w.grad();
      auto d = w.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 0.5 * g[i];
      w.clear_grad();
    }
  }
  std::size_t correct = 0;
  NoGradScope off;
  for (const auto& ex : task.dev) {
    const Tensor logits = sum_rows_probe(w, ex.tokens);
    const int predicted = logits.at(0, 1) > logits.at(0, 0) ? 1 : 0;
    correct += predicted == ex.labels[0] ? 1 : 0;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(task.dev.size()) > 0.9);
}

TEST_CASE("tag spans and span F1") {
  const std::vector<int> tags{0, 1, 2, 0, 2, 1, 1, 0};
  const auto spans = tag_spans(tags);
  REQUIRE(spans.size() == 4);
  CHECK(spans[0] == std::pair<std::size_t, std::size_t>{1, 3});
  CHECK(spans[1] == std::pair<std::size_t, std::size_t>{4, 5});
  CHECK(spans[3] == std::pair<std::size_t, std::size_t>{6, 7});

  SpanCounts counts;
  accumulate_spans(std::vector<int>{1, 2, 0, 1}, std::vector<int>{1, 2, 0, 0}, counts);
  CHECK(counts.gold == 2);
  CHECK(counts.predicted == 1);
  CHECK(counts.matched == 1);
  CHECK(counts.f1() == doctest::Approx(2.0 / 3.0));
  // A predicted span with the wrong extent does not match.
  SpanCounts partial;
  accumulate_spans(std::vector<int>{1, 2, 0}, std::vector<int>{1, 0, 0}, partial);
  CHECK(partial.matched == 0);
  CHECK(partial.f1() == 0.0);
  CHECK(SpanCounts{}.f1() == 1.0);
}

TEST_CASE("example text format round trip") {
  TaskSpec spec;
  spec.kind = TaskKind::kTagging;
  spec.train_size = 20;
  spec.dev_size = 1;
  spec.test_size = 1;
  const SyntheticTask task = generate_task(spec);
  std::ostringstream out;
  write_examples(out, task.train);
  const std::string text = out.str();
  CHECK(text.find('\t') != std::string::npos);
  std::istringstream in(text);
  CHECK(read_examples(in) == task.train);
  std::istringstream bad("1 2 3\n");
  CHECK_THROWS(read_examples(bad));
}

TEST_CASE("pretraining") {
  EncoderConfig c = EncoderConfig::standard(16, 2, 2);
  c.vocab_size = 32;
  c.max_seq_len = 16;
  SUBCASE("zero steps leaves weights unchanged") {
    EncoderWeights w = init_encoder(c, 1);
    const EncoderWeights before = w.clone();
    PretrainConfig pc;
    pc.steps = 0;
    CHECK(pretrain_backbone(w, pc).losses.empty());
    CHECK(bitwise_equal(w.blocks[1].ffn.w_in, before.blocks[1].ffn.w_in));
  }
  SUBCASE("pretext loss decreases over 500 steps and the head is untouched") {
    EncoderWeights w = init_encoder(c, 1);
    const Tensor head = w.head_weight.clone();
    PretrainConfig pc;
    pc.steps = 500;
    pc.batch_size = 4;
    const PretrainReport r = pretrain_backbone(w, pc);
    REQUIRE(r.losses.size() == 500);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      first += r.losses[i];
      last += r.losses[480 + i];
    }
    CHECK(last < first);
    CHECK(bitwise_equal(w.head_weight, head));
    CHECK_FALSE(w.blocks[0].ffn.w_in.requires_grad());
    CHECK_FALSE(w.token_embedding.has_grad());
  }
  SUBCASE("batch size must be positive") {
    EncoderWeights w = init_encoder(c, 1);
    PretrainConfig pc;
    pc.steps = 1;
    pc.batch_size = 0;
    CHECK_THROWS_AS(pretrain_backbone(w, pc), ContractError);
  }
}

TEST_CASE("diagnostic: pretrained versus random backbone on tagging") {
  // Reported, not asserted.
  TaskSpec spec;
  spec.kind = TaskKind::kTagging;
  spec.train_size = 200;
  spec.dev_size = 100;
  spec.test_size = 10;
  const SyntheticTask task = generate_task(spec);
  EncoderConfig c = EncoderConfig::standard(16, 2, 2);
  c.vocab_size = spec.vocab_size;
  c.num_classes = task_num_classes(spec);
  AdapterSpec a;
  a.added_units = 8;
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 2;
  double f1[2] = {0.0, 0.0};
  for (int pretrained = 0; pretrained < 2; ++pretrained) {
    Model m = make_model(c, a, 1, 2);
    if (pretrained) {
      PretrainConfig pc;
      pc.steps = 150;
      pretrain_backbone(m.backbone, pc);
    }
    ParamRegistry registry = register_parameters(m);
    f1[pretrained] = train(m, registry, task, tc).final_dev.f1.value_or(0.0);
  }
  MESSAGE("tagging dev F1 random backbone " << f1[0] << ", pretrained backbone " << f1[1]);
  CHECK(f1[0] >= 0.0);
}
