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

#include <cmath>
#include <limits>

#include "fltune/tensor.hpp"

using namespace fltune;

TEST_CASE("tensor construction and element access") {
  Tensor t(2, 3, 1.5);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  t.at(0, 1) = -2.0;
  CHECK(t.data()[1] == -2.0);

  const Tensor r = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(r.at(1, 0) == 3.0);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(r.item(), ContractError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(Tensor::from_rows({{1, 2}, {3}}), DimensionError);
}

TEST_CASE("zero-sized tensors are legal") {
  Tensor t(0, 5);
  CHECK(t.size() == 0);
  CHECK(all_finite(t));
  CHECK(bitwise_equal(t, Tensor(0, 5)));
  CHECK_FALSE(bitwise_equal(t, Tensor(5, 0)));
}

TEST_CASE("copies share storage, clone does not") {
  Tensor a(2, 2, 1.0);
  Tensor b = a;
  Tensor c = a.clone();
  b.at(0, 0) = 9.0;
  CHECK(a.at(0, 0) == 9.0);
  CHECK(c.at(0, 0) == 1.0);
  CHECK(a.same_storage(b));
  CHECK_FALSE(a.same_storage(c));
}

TEST_CASE("gradient buffers are lazy") {
  Tensor t(2, 2);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().empty());
  t.mutable_grad()[3] = 1.0;
  CHECK(t.has_grad());
  CHECK(t.grad()[3] == 1.0);
  CHECK(t.grad()[0] == 0.0);
  t.clear_grad();
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("content hash tracks bytes and shape") {
  Tensor a = Tensor::from_rows({{1, 2, 3, 4}});
  Tensor b = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(content_hash(a) != content_hash(b));
  CHECK(content_hash(a) == content_hash(a.clone()));
  const auto before = content_hash(a);
  a.at(0, 3) = std::nextafter(4.0, 5.0);
  CHECK(content_hash(a) != before);
  // -0.0 and 0.0 compare equal but differ bitwise.
  CHECK(content_hash(Tensor::scalar(0.0)) != content_hash(Tensor::scalar(-0.0)));
  CHECK_FALSE(bitwise_equal(Tensor::scalar(0.0), Tensor::scalar(-0.0)));
}

TEST_CASE("max_abs_diff and all_finite") {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{1, 2.5}, {3, 3}});
  CHECK(max_abs_diff(a, b) == 1.0);
  CHECK_THROWS_AS(max_abs_diff(a, Tensor(1, 4)), DimensionError);
  Tensor c = a.clone();
  c.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(all_finite(c));
  CHECK(to_string(Shape{3, 4}) == "[3x4]");
}
