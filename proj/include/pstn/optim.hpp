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

#include <cstdint>
#include <span>
#include <vector>

namespace pstn {

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-3;
  double weight_decay = 0.01;
};

// One optimized tensor for a single step: its values, the gradient for this
// step, and a learning-rate multiplier for its parameter group.
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
  double lr_scale = 1.0;
};

// Decoupled-weight-decay Adam. Moment buffers are created on the first step
// and are keyed by slot position, so callers must pass the same slots in the
// same order every step.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(std::span<const ParamSlot> slots);

  const AdamWConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace pstn
