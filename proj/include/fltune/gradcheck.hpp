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
#include <functional>

#include "fltune/tensor.hpp"

namespace fltune {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Tensors larger than this are checked on a random sample of coordinates.
  std::size_t max_coordinates = 20;
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

/// Central finite-difference check of d f / d x.
///
/// `f` builds a scalar from the current contents of `x` (and anything else it
/// closes over). The analytic gradient comes from one taped evaluation; each
/// sampled coordinate is then perturbed by +-eps in place and restored.
/// Returns max |analytic - numeric| / max(1, |numeric|). `x` must require
/// gradients.
double check_gradients(const std::function<Tensor()>& f, Tensor& x, const GradCheckOptions& options = {});

}  // namespace fltune
