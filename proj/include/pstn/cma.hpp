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

// Causal mediation analysis over attention heads.

#include <string>
#include <vector>

#include "pstn/head_matrix.hpp"
#include "pstn/model.hpp"
#include "pstn/synthdata.hpp"

namespace pstn {

enum class EffectMode {
  indirect,  // patch one head from the intervened run into the base run
  total,     // intervened odds over base odds; the same for every head
};
const char* to_string(EffectMode m);
EffectMode parse_effect_mode(std::string_view s);

struct HeadEffectMatrix {
  HeadMatrix effects;
  std::string provenance;
};

// An intervention entry in token space.
struct PreparedIntervention {
  Sequence base;
  Sequence intervened;
  std::size_t mask_pos = 0;
  TokenId anti = 0;
  TokenId stereo = 0;
};

PreparedIntervention prepare_intervention(const InterventionEntry& e, const Vocabulary& vocab);

// Position of the single [MASK]; throws ContractError unless exactly one.
std::size_t single_mask_position(const Sequence& ids, TokenId mask_id);

// p(anti) / p(stereo) at the masked slot.
double candidate_odds(const TransformerLM& model, const Sequence& prompt, std::size_t mask_pos,
                      TokenId anti, TokenId stereo);
// Same, from a logits row.
double odds_from_logits(const Tensor& logits, std::size_t row, TokenId anti, TokenId stereo);

double head_effect(const TransformerLM& model, const PreparedIntervention& entry, HeadIndex h,
                   EffectMode mode);

// Indirect effect of patching `h` with an arbitrary activation source.
double head_effect_from_source(const TransformerLM& model, const PreparedIntervention& entry,
                               HeadIndex h, const Tensor& source);

// Mean head_effect over all entries.
HeadEffectMatrix run_cma(const TransformerLM& model,
                         const std::vector<PreparedIntervention>& entries, EffectMode mode,
                         const std::string& provenance = {});

enum class MaskMode {
  magnitude,  // |Ba| < |B0|
  raw,        // Ba < B0
};
const char* to_string(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);

// Row-major eligibility of each head.
struct HeadMask {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<bool> values;
  bool at(std::size_t l, std::size_t k) const { return values.at(l * heads + k); }
  std::size_t count() const;
};

HeadMask debiased_mask(const HeadMatrix& b0, const HeadMatrix& ba, MaskMode mode);

}  // namespace pstn
