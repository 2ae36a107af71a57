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
#include <functional>
#include <span>
#include <vector>

#include "fltune/tensor.hpp"

namespace fltune {

/// Ordered record of primitive ops for reverse-mode differentiation.
///
/// A tape is activated for the current thread with TapeScope. While active,
/// every op whose inputs require gradients appends an entry; ops on frozen
/// inputs only are never recorded, so frozen tensors never receive a
/// gradient buffer. A tape must stay on the thread that created its scope.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Tensor output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and replays entries in reverse order.
  /// Gradients accumulate into existing buffers; callers zero parameter
  /// gradients between steps.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  /// The tape active on this thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  struct Entry {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

/// RAII activation of a tape for the current thread. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the current thread (inference, oracles).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

enum class Axis { kRows, kCols };

// Primitive ops. Each checks shapes and records its backward when a tape is
// active and some input requires gradients.

Tensor matmul(const Tensor& a, const Tensor& b);
/// seed + a*b, accumulating each output entry in k-order starting from the
/// seed value. matmul_add(matmul(a1, b1), a2, b2) therefore sums exactly like
/// matmul([a1 : a2], [b1 ; b2]).
Tensor matmul_add(const Tensor& seed, const Tensor& a, const Tensor& b);
/// a * b^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// seed + a * b^T with the same accumulation rule as matmul_add.
Tensor matmul_nt_add(const Tensor& seed, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
/// Adds a 1xN row to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// max(0, x); the subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
/// Per-row normalization followed by elementwise gain and bias (1xN rows).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat(const Tensor& a, const Tensor& b, Axis axis);
Tensor concat(std::span<const Tensor> parts, Axis axis);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);

/// Rows of `table` selected by `ids`; backward scatter-adds.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& a);
/// Mean over rows of -log softmax(logits)[row, labels[row]].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace fltune
