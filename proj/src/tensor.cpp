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

#include "fltune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fltune {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape.rows) + "x" + std::to_string(shape.cols) + "]";
}

Tensor::Tensor() : impl_(std::make_shared<Storage>()) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : impl_(std::make_shared<Storage>()) {
  impl_->shape = {rows, cols};
  impl_->data.assign(rows * cols, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Storage>()) {
  if (values.size() != shape.size()) {
    throw DimensionError("tensor of shape " + to_string(shape) + " given " + std::to_string(values.size()) +
                         " values");
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n == 0 ? 0 : rows.front().size();
  std::vector<double> values;
  values.reserve(n * m);
  for (const auto& row : rows) {
    if (row.size() != m) throw DimensionError("ragged rows in Tensor::from_rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({n, m}, std::move(values));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (!impl_->has_grad) return {};
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_->has_grad) {
    impl_->grad.assign(impl_->data.size(), 0.0);
    impl_->has_grad = true;
  }
  return impl_->grad;
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
  impl_->has_grad = false;
}

Tensor Tensor::clone() const {
  Tensor copy(impl_->shape, impl_->data);
  copy.set_requires_grad(impl_->requires_grad);
  return copy;
}

std::uint64_t content_hash(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t dims[2] = {t.rows(), t.cols()};
  mix(reinterpret_cast<const unsigned char*>(dims), sizeof(dims));
  mix(reinterpret_cast<const unsigned char*>(t.data().data()), t.size() * sizeof(double));
  return h;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace fltune
