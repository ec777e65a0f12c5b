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

#include <gtest/gtest.h>

#include <cmath>

#include "pstn/cma.hpp"

using namespace pstn;

namespace {

struct Fixture {
  Lexicon lex = default_lexicon();
  Vocabulary vocab{lex};
  TransformerLM model{[&] {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.width = 16;
    cfg.ff_width = 32;
    cfg.vocab_size = vocab.size();
    cfg.max_len = 16;
    cfg.init_std = 0.3;
    cfg.init_seed = 8;
    return cfg;
  }()};
  std::vector<PreparedIntervention> entries;
  Fixture() {
    for (const auto& e : gen_interventions(lex, 16)) entries.push_back(prepare_intervention(e, vocab));
  }
};

}  // namespace

TEST(Cma, SelfPatchHasZeroEffect) {
  Fixture f;
  for (const auto& e : f.entries) {
    const std::size_t pos[] = {e.mask_pos};
    const MlmCapture base = capture_heads(f.model, e.base, pos);
    for (const auto& h : all_heads(f.model.config())) {
      EXPECT_LT(std::abs(head_effect_from_source(f.model, e, h, base.heads.at(h))), 1e-12);
    }
  }
}

TEST(Cma, OddsMatchSoftmaxRatio) {
  Fixture f;
  const auto& e = f.entries[0];
  const std::size_t pos[] = {e.mask_pos};
  const Tensor logits = forward_mlm(f.model, e.base, pos);
  const double expect = std::exp(logits.at(0, e.anti) - logits.at(0, e.stereo));
  EXPECT_NEAR(candidate_odds(f.model, e.base, e.mask_pos, e.anti, e.stereo), expect, 1e-12 * expect);
}

TEST(Cma, RunCmaAveragesEntries) {
  Fixture f;
  std::vector<PreparedIntervention> two(f.entries.begin(), f.entries.begin() + 2);
  const HeadEffectMatrix m = run_cma(f.model, two, EffectMode::indirect, "test");
  EXPECT_EQ(m.provenance, "test");
  const HeadIndex h{1, 3};
  const double expect =
      (head_effect(f.model, two[0], h, EffectMode::indirect) + head_effect(f.model, two[1], h, EffectMode::indirect)) / 2;
  EXPECT_NEAR(m.effects.at(h), expect, 1e-12);
  const HeadEffectMatrix t = run_cma(f.model, two, EffectMode::total);
  EXPECT_EQ(t.effects.at(0, 0), t.effects.at(1, 2));
  EXPECT_THROW(run_cma(f.model, {}, EffectMode::indirect), ContractError);
}

TEST(Cma, SingleMaskPositionContract) {
  EXPECT_EQ(single_mask_position({2, 5, 1, 6}, 1), 2u);
  EXPECT_THROW(single_mask_position({2, 5, 6}, 1), ContractError);
  EXPECT_THROW(single_mask_position({1, 5, 1}, 1), ContractError);
}

TEST(Cma, MaskModes) {
  HeadMatrix b0(1, 3), ba(1, 3);
  b0.values = {2.0, -3.0, 0.5};
  ba.values = {1.0, -1.0, -0.7};
  const HeadMask mag = debiased_mask(b0, ba, MaskMode::magnitude);
  EXPECT_EQ(mag.values, (std::vector<bool>{true, true, false}));
  EXPECT_EQ(mag.count(), 2u);
  const HeadMask raw = debiased_mask(b0, ba, MaskMode::raw);
  EXPECT_EQ(raw.values, (std::vector<bool>{true, false, true}));
  EXPECT_THROW(debiased_mask(b0, HeadMatrix(2, 3), MaskMode::raw), DimensionError);
}

TEST(Cma, HandComputedOddsAndEffects) {
  const Tensor base(Shape{1, 3}, {0.0, std::log(0.5), 0.0});
  const Tensor inter(Shape{1, 3}, {0.0, std::log(2.0), 0.0});
  EXPECT_NEAR(odds_from_logits(base, 0, 1, 2), 0.5, 1e-15);
  EXPECT_NEAR(odds_from_logits(inter, 0, 1, 2) / odds_from_logits(base, 0, 1, 2) - 1.0, 3.0, 1e-12);
  EXPECT_EQ(odds_from_logits(base, 0, 2, 2), 1.0);
}

TEST(Cma, NoInterventionMeansNoEffect) {
  Fixture f;
  PreparedIntervention e = f.entries[0];
  e.intervened = e.base;
  EXPECT_EQ(head_effect(f.model, e, HeadIndex{0, 1}, EffectMode::total), 0.0);
  EXPECT_LT(std::abs(head_effect(f.model, e, HeadIndex{1, 2}, EffectMode::indirect)), 1e-12);
}

TEST(Cma, DuplicatedEntriesLeaveMeanUnchanged) {
  Fixture f;
  const std::vector<PreparedIntervention> one{f.entries[3]}, two{f.entries[3], f.entries[3]};
  const HeadEffectMatrix a = run_cma(f.model, one, EffectMode::indirect);
  const HeadEffectMatrix b = run_cma(f.model, two, EffectMode::indirect);
  for (std::size_t i = 0; i < a.effects.values.size(); ++i)
    EXPECT_NEAR(a.effects.values[i], b.effects.values[i], 1e-12 * (1 + std::abs(a.effects.values[i])));
}
