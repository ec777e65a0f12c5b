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

#include "pstn/optim.hpp"

#include <cmath>
#include <string>

#include "pstn/tensor.hpp"

namespace pstn {

void AdamW::step(std::span<const ParamSlot> slots) {
  if (m_.empty()) {
    m_.resize(slots.size());
    v_.resize(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s) {
      m_[s].assign(slots[s].value.size(), 0.0);
      v_[s].assign(slots[s].value.size(), 0.0);
    }
  }
  if (slots.size() != m_.size()) {
    throw ContractError("AdamW: slot count changed between steps");
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const ParamSlot& slot = slots[s];
    if (slot.grad.size() != slot.value.size() || m_[s].size() != slot.value.size()) {
      throw DimensionError("AdamW: slot " + std::to_string(s) + " has " +
                           std::to_string(slot.value.size()) + " values and " +
                           std::to_string(slot.grad.size()) + " gradients");
    }
    const double lr = cfg_.lr * slot.lr_scale;
    auto& m = m_[s];
    auto& v = v_[s];
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double g = slot.grad[i];
      double& w = slot.value[i];
      w -= lr * cfg_.weight_decay * w;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace pstn
