// Copyright 2026 The pstn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "pstn/tensor.hpp"

namespace pstn {

// Central-difference gradient of a scalar function at x.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                                   const Tensor& x, double h = 1e-5) {
  Tensor grad(x.shape, 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double up = f(probe);
    probe.data[i] = orig - h;
    const double down = f(probe);
    probe.data[i] = orig;
    grad.data[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Worst elementwise |a - n| / max(|a|, |n|, abs_floor / rel_tol). Comparing
// the result against rel_tol accepts an element when it is within rel_tol
// relatively or within abs_floor absolutely.
inline double gradient_error(const Tensor& analytic, const Tensor& numeric,
                             double abs_floor = 1e-8, double rel_tol = 1e-4) {
  if (analytic.shape != numeric.shape) {
    throw DimensionError("gradient_error: " + shape_str(analytic.shape) +
                         " vs " + shape_str(numeric.shape));
  }
  const double denom_floor = abs_floor / rel_tol;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data[i], n = numeric.data[i];
    const double denom = std::max({std::abs(a), std::abs(n), denom_floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace pstn
