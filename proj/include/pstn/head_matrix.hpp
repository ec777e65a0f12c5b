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

#include <string>
#include <vector>

#include "pstn/model.hpp"

namespace pstn {

// Dense layers x heads matrix of per-head values.
struct HeadMatrix {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<double> values;

  HeadMatrix() = default;
  HeadMatrix(std::size_t l, std::size_t k, double fill = 0.0)
      : layers(l), heads(k), values(l * k, fill) {}

  double& at(std::size_t l, std::size_t k) { return values.at(l * heads + k); }
  double at(std::size_t l, std::size_t k) const { return values.at(l * heads + k); }
  double& at(HeadIndex h) { return at(h.layer, h.head); }
  double at(HeadIndex h) const { return at(h.layer, h.head); }
  bool operator==(const HeadMatrix&) const = default;
};

// Rows "layer,head,value" under a "# <provenance>" line and a header naming
// the value column.
void write_head_matrix_csv(const std::string& path, const HeadMatrix& m,
                           const std::string& value_name, const std::string& provenance);
HeadMatrix read_head_matrix_csv(const std::string& path, std::string* provenance = nullptr);

}  // namespace pstn
