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

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fltune {

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Dense row-major matrix of doubles with an optional gradient buffer.
///
/// Every tensor is two-dimensional; a scalar is 1x1 and a bias is a 1xN row.
/// Zero-sized dimensions are legal. Copies share storage (handle semantics),
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rows() const { return impl_->shape.rows; }
  std::size_t cols() const { return impl_->shape.cols; }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }

  double at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape.cols + c]; }
  double& at(std::size_t r, std::size_t c) { return impl_->data[r * impl_->shape.cols + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return impl_->has_grad; }
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> mutable_grad();
  /// Releases the gradient buffer.
  void clear_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool has_grad = false;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

/// FNV-1a over the raw bytes of the tensor payload.
std::uint64_t content_hash(const Tensor& t);

/// Max absolute elementwise difference; throws on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// True when both tensors have the same shape and identical payload bytes.
bool bitwise_equal(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);

}  // namespace fltune
