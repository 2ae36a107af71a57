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

#include "fltune/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fltune/autograd.hpp"

namespace fltune {

double check_gradients(const std::function<Tensor()>& f, Tensor& x, const GradCheckOptions& options) {
  if (options.eps <= 0.0) throw ContractError("check_gradients: eps must be positive");
  if (!x.requires_grad()) throw ContractError("check_gradients: tensor does not require gradients");
  if (x.size() == 0) return 0.0;

  // Previously accumulated gradients would bias the analytic side.
  x.clear_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = f();
    if (loss.size() != 1) throw ContractError("check_gradients: f must return a scalar");
    if (loss.requires_grad()) tape.backward(loss);
    const auto g = x.grad();
    analytic.assign(x.size(), 0.0);
    if (!g.empty()) std::copy(g.begin(), g.end(), analytic.begin());
  }
  x.clear_grad();

  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  NoGradScope no_grad;
  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double original = values[c];
    values[c] = original + options.eps;
    const double plus = f().item();
    values[c] = original - options.eps;
    const double minus = f().item();
    values[c] = original;
    const double numeric = (plus - minus) / (2.0 * options.eps);
    const double err = std::abs(analytic[c] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fltune
