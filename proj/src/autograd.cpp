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

#include "fltune/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fltune {
namespace {

thread_local Tape* g_active_tape = nullptr;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void record(Tensor& out, Tape::BackwardFn fn) {
  out.set_requires_grad(true);
  g_active_tape->record(out, std::move(fn));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

// out = seed + a*b, row-major i-k-j loop so each output entry sums in k order.
void gemm_nn(const Tensor* seed, const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto o = out.mutable_data();
  if (seed != nullptr) {
    std::copy(seed->data().begin(), seed->data().end(), o.begin());
  }
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = o.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

// out = seed + a*b^T.
void gemm_nt(const Tensor* seed, const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  auto o = out.mutable_data();
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = seed != nullptr ? seed->data()[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      o[i * n + j] = s;
    }
  }
}

// ga += g * b^T  (g: m x n, b: k x n)
void accumulate_g_bt(std::span<const double> g, const Tensor& b, std::span<double> ga, std::size_t m) {
  const std::size_t k = b.rows(), n = b.cols();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
      ga[i * k + p] += s;
    }
  }
}

// gb += a^T * g  (a: m x k, g: m x n)
void accumulate_at_g(const Tensor& a, std::span<const double> g, std::span<double> gb, std::size_t n) {
  const std::size_t m = a.rows(), k = a.cols();
  const auto av = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
    }
  }
}

void accumulate(Tensor& target, std::span<const double> g) {
  auto dst = target.mutable_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

Tensor matmul_impl(const Tensor* seed, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  if (seed != nullptr && seed->shape() != Shape{a.rows(), b.cols()}) {
    throw DimensionError("matmul_add: seed " + to_string(seed->shape()) + " does not match product shape " +
                         to_string(Shape{a.rows(), b.cols()}));
  }
  Tensor out(a.rows(), b.cols());
  gemm_nn(seed, a, b, out);
  const Tensor none;
  if (tracking({seed != nullptr ? seed : &none, &a, &b})) {
    Tensor sa = a, sb = b;
    Tensor ss = seed != nullptr ? *seed : Tensor();
    record(out, [sa, sb, ss](const Tensor& o) mutable {
      const auto g = o.grad();
      if (ss.requires_grad()) accumulate(ss, g);
      if (sa.requires_grad()) accumulate_g_bt(g, sb, sa.mutable_grad(), sa.rows());
      if (sb.requires_grad()) accumulate_at_g(sa, g, sb.mutable_grad(), sb.cols());
    });
  }
  return out;
}

Tensor matmul_nt_impl(const Tensor* seed, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  if (seed != nullptr && seed->shape() != Shape{a.rows(), b.rows()}) {
    throw DimensionError("matmul_nt_add: seed " + to_string(seed->shape()) + " does not match product shape " +
                         to_string(Shape{a.rows(), b.rows()}));
  }
  Tensor out(a.rows(), b.rows());
  gemm_nt(seed, a, b, out);
  const Tensor none;
  if (tracking({seed != nullptr ? seed : &none, &a, &b})) {
    Tensor sa = a, sb = b;
    Tensor ss = seed != nullptr ? *seed : Tensor();
    record(out, [sa, sb, ss](const Tensor& o) mutable {
      const auto g = o.grad();
      const std::size_t m = sa.rows(), n = sb.rows(), k = sa.cols();
      if (ss.requires_grad()) accumulate(ss, g);
      if (sa.requires_grad()) {
        // ga += g * b
        auto ga = sa.mutable_grad();
        const auto bv = sb.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
          }
      }
      if (sb.requires_grad()) {
        // gb += g^T * a
        auto gb = sb.mutable_grad();
        const auto av = sa.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
          }
      }
    });
  }
  return out;
}

}  // namespace

void Tape::record(Tensor output, BackwardFn backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor that requires gradients");
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward(it->output);
  }
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(nullptr, a, b); }
Tensor matmul_add(const Tensor& seed, const Tensor& a, const Tensor& b) { return matmul_impl(&seed, a, b); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_nt_impl(nullptr, a, b); }
Tensor matmul_nt_add(const Tensor& seed, const Tensor& a, const Tensor& b) {
  return matmul_nt_impl(&seed, a, b);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  Tensor out(a.rows(), a.cols());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  if (tracking({&a, &b})) {
    record(out, [sa = a, sb = b](const Tensor& t) mutable {
      if (sa.requires_grad()) accumulate(sa, t.grad());
      if (sb.requires_grad()) accumulate(sb, t.grad());
    });
  }
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a, row);
  Tensor out(a.rows(), a.cols());
  auto o = out.mutable_data();
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = a.data()[i * n + j] + row.data()[j];
  if (tracking({&a, &row})) {
    record(out, [sa = a, sr = row](const Tensor& t) mutable {
      const auto g = t.grad();
      if (sa.requires_grad()) accumulate(sa, g);
      if (sr.requires_grad()) {
        auto gr = sr.mutable_grad();
        const std::size_t cols = sr.cols();
        for (std::size_t i = 0; i < sa.rows(); ++i)
          for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  Tensor out(a.rows(), a.cols());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  if (tracking({&a, &b})) {
    record(out, [sa = a, sb = b](const Tensor& t) mutable {
      const auto g = t.grad();
      if (sa.requires_grad()) {
        auto ga = sa.mutable_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * sb.data()[i];
      }
      if (sb.requires_grad()) {
        auto gb = sb.mutable_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * sa.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.rows(), a.cols());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * factor;
  if (tracking({&a})) {
    record(out, [sa = a, factor](const Tensor& t) mutable {
      auto ga = sa.mutable_grad();
      const auto g = t.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (tracking({&x})) {
    record(out, [sx = x](const Tensor& t) mutable {
      auto gx = sx.mutable_grad();
      const auto g = t.grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (sx.data()[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(m, n);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    const double hi = n == 0 ? 0.0 : *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[i * n + j] = std::exp(row[j] - hi);
      total += o[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] /= total;
  }
  if (tracking({&x})) {
    record(out, [sx = x, m, n](const Tensor& t) mutable {
      auto gx = sx.mutable_grad();
      const auto g = t.grad();
      const auto yv = t.data();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * yv[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += yv[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.shape() != Shape{1, n}) shape_error("layer_norm gain", x, gain);
  if (bias.shape() != Shape{1, n}) shape_error("layer_norm bias", x, bias);
  Tensor out(m, n);
  std::vector<double> normalized(m * n);
  std::vector<double> inv_std(m);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normalized[i * n + j] = (row[j] - mean) * inv_std[i];
      o[i * n + j] = normalized[i * n + j] * gain.data()[j] + bias.data()[j];
    }
  }
  if (tracking({&x, &gain, &bias})) {
    record(out, [sx = x, sg = gain, sb = bias, normalized = std::move(normalized), inv_std = std::move(inv_std), m,
                 n](const Tensor& t) mutable {
      const auto g = t.grad();
      if (sg.requires_grad()) {
        auto gg = sg.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * normalized[i * n + j];
      }
      if (sb.requires_grad()) {
        auto gb = sb.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
      if (sx.requires_grad()) {
        auto gx = sx.mutable_grad();
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = g[i * n + j] * sg.data()[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * normalized[i * n + j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j)
            gx[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - normalized[i * n + j] * mean_dx);
        }
      }
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, Axis axis) {
  const Tensor parts[2] = {a, b};
  return concat(std::span<const Tensor>(parts), axis);
}

Tensor concat(std::span<const Tensor> parts, Axis axis) {
  if (parts.empty()) return Tensor();
  std::size_t rows = parts.front().rows(), cols = parts.front().cols();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (axis == Axis::kRows) {
      if (parts[p].cols() != cols) shape_error("concat(rows)", parts.front(), parts[p]);
      rows += parts[p].rows();
    } else {
      if (parts[p].rows() != rows) shape_error("concat(cols)", parts.front(), parts[p]);
      cols += parts[p].cols();
    }
  }
  Tensor out(rows, cols);
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& part : parts) {
    for (std::size_t i = 0; i < part.rows(); ++i)
      for (std::size_t j = 0; j < part.cols(); ++j) {
        const std::size_t r = axis == Axis::kRows ? offset + i : i;
        const std::size_t c = axis == Axis::kCols ? offset + j : j;
        o[r * cols + c] = part.at(i, j);
      }
    offset += axis == Axis::kRows ? part.rows() : part.cols();
  }
  const bool any_grad = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (Tape::active() != nullptr && any_grad) {
    std::vector<Tensor> saved(parts.begin(), parts.end());
    record(out, [saved, axis, cols](const Tensor& t) mutable {
      const auto g = t.grad();
      std::size_t off = 0;
      for (auto& part : saved) {
        if (part.requires_grad()) {
          auto gp = part.mutable_grad();
          for (std::size_t i = 0; i < part.rows(); ++i)
            for (std::size_t j = 0; j < part.cols(); ++j) {
              const std::size_t r = axis == Axis::kRows ? off + i : i;
              const std::size_t c = axis == Axis::kCols ? off + j : j;
              gp[i * part.cols() + j] += g[r * cols + c];
            }
        }
        off += axis == Axis::kRows ? part.rows() : part.cols();
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + to_string(a.shape()));
  }
  const std::size_t n = a.cols();
  Tensor out(Shape{count, n}, std::vector<double>(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                                                  a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n)));
  if (tracking({&a})) {
    record(out, [sa = a, begin, n](const Tensor& t) mutable {
      auto ga = sa.mutable_grad();
      const auto g = t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw DimensionError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + to_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(m, count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = a.at(i, begin + j);
  if (tracking({&a})) {
    record(out, [sa = a, begin, count, m, n](const Tensor& t) mutable {
      auto ga = sa.mutable_grad();
      const auto g = t.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  const std::size_t n = table.cols();
  Tensor out(ids.size(), n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(table.rows()) + " rows");
    }
    const auto src = table.data().subspan(static_cast<std::size_t>(ids[i]) * n, n);
    std::copy(src.begin(), src.end(), out.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  if (tracking({&table})) {
    record(out, [st = table, ids = std::vector<int>(ids.begin(), ids.end()), n](const Tensor& t) mutable {
      auto gt = st.mutable_grad();
      const auto g = t.grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) gt[static_cast<std::size_t>(ids[i]) * n + j] += g[i * n + j];
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (tracking({&a})) {
    record(out, [sa = a](const Tensor& t) mutable {
      const double g = t.grad()[0];
      for (double& v : sa.mutable_grad()) v += g;
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (labels.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(logits.shape()));
  }
  if (m == 0) throw ContractError("cross_entropy: no rows");
  std::vector<double> probs(m * n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " outside " + std::to_string(n) +
                          " classes");
    }
    const double* row = logits.data().data() + i * n;
    const double hi = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(row[j] - hi);
      z += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += (std::log(z) + hi) - row[labels[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m));
  if (tracking({&logits})) {
    record(out, [sl = logits, probs = std::move(probs), lab = std::vector<int>(labels.begin(), labels.end()), m,
                 n](const Tensor& t) mutable {
      const double g = t.grad()[0] / static_cast<double>(m);
      auto gl = sl.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double target = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
          gl[i * n + j] += g * (probs[i * n + j] - target);
        }
    });
  }
  return out;
}

}  // namespace fltune
