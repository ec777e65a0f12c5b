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

#include <set>

#include "pstn/model.hpp"
#include "pstn/rng.hpp"

using namespace pstn;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.width = 16;
  cfg.ff_width = 24;
  cfg.vocab_size = 20;
  cfg.max_len = 8;
  cfg.init_std = 0.2;
  cfg.init_seed = 3;
  return cfg;
}

}  // namespace

TEST(Model, ConfigValidation) {
  ModelConfig cfg = small_config();
  cfg.width = 15;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.head_gates = {1.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Model, InitIsSeedDeterministic) {
  TransformerLM a(small_config()), b(small_config());
  EXPECT_EQ(a.checksum(), b.checksum());
  ModelConfig other = small_config();
  other.init_seed = 4;
  EXPECT_NE(a.checksum(), TransformerLM(other).checksum());
}

TEST(Model, HeadSlicesPartitionAttentionProjections) {
  TransformerLM model(small_config());
  std::map<std::string, std::set<std::size_t>> seen;
  std::size_t total = 0;
  for (const auto& h : all_heads(model.config())) {
    const HeadSlice s = model.head_slice(h);
    total += s.count();
    for (const auto& e : s.entries) {
      EXPECT_TRUE(is_attention_param(e.param)) << e.param;
      for (std::size_t i : e.indices) EXPECT_TRUE(seen[e.param].insert(i).second) << e.param << " " << i;
    }
  }
  // Per head: three [d, dh] column blocks, three dh biases, one [dh, d] row block.
  const std::size_t d = 16, dh = 4;
  EXPECT_EQ(total, 8 * (3 * d * dh + 3 * dh + dh * d));
  for (const auto& [name, idx] : seen) {
    if (name.find("attn.w") != std::string::npos || name.find("attn.b") != std::string::npos) {
      EXPECT_EQ(idx.size(), model.param(name).size()) << name;
    }
  }
}

TEST(Model, SelfPatchIsIdentity) {
  TransformerLM model(small_config());
  const Sequence ids{2, 5, 1, 9, 11, 3};
  const std::vector<std::size_t> masked{2};
  RngStream rng(6);
  for (double& v : model.param("lm.w").data) v = rng.normal();
  const MlmCapture cap = capture_heads(model, ids, masked);
  EXPECT_EQ(forward_patched(model, ids, masked, {}), forward_mlm(model, ids, masked));
  EXPECT_EQ(forward_patched(model, ids, masked, cap.heads), cap.logits);
  for (const auto& [h, act] : cap.heads) {
    std::map<HeadIndex, Tensor> p{{h, act}};
    const Tensor patched = forward_patched(model, ids, masked, p);
    EXPECT_LE(max_abs_diff(patched, cap.logits), 1e-12);
  }
}

TEST(Model, ZeroLmHeadPredictsUniformly) {
  TransformerLM model(small_config());
  const std::vector<std::size_t> masked{1, 3};
  const Tensor logits = forward_mlm(model, Sequence{2, 1, 5, 1}, masked);
  for (double v : logits.data) EXPECT_EQ(v, logits.data[0]);
  EXPECT_EQ(forward_mlm(model, Sequence{2, 1, 5, 1}, masked), logits);
}

TEST(Model, PatchingChangesOutputAndChecksShape) {
  TransformerLM model(small_config());
  RngStream rng(4);
  for (double& v : model.param("lm.w").data) v = rng.normal();
  const Sequence ids{2, 5, 1, 9};
  const std::vector<std::size_t> masked{2};
  const MlmCapture cap = capture_heads(model, ids, masked);
  std::map<HeadIndex, Tensor> p{{HeadIndex{1, 2}, Tensor(cap.heads.at({1, 2}).shape, 3.0)}};
  EXPECT_GT(max_abs_diff(forward_patched(model, ids, masked, p), cap.logits), 1e-6);
  std::map<HeadIndex, Tensor> bad{{HeadIndex{0, 1}, Tensor({2, 3})}};
  try {
    forward_patched(model, ids, masked, bad);
    FAIL();
  } catch (const PatchError& e) {
    EXPECT_NE(std::string(e.what()).find("0"), std::string::npos);
  }
}

TEST(Model, ZeroGateRemovesHeadInfluence) {
  ModelConfig cfg = small_config();
  cfg.head_gates.assign(8, 1.0);
  cfg.head_gates[5] = 0.0;
  TransformerLM model(cfg);
  const Sequence ids{2, 5, 1, 9};
  const std::vector<std::size_t> masked{2};
  RngStream rng(5);
  for (double& v : model.param("lm.w").data) v = rng.normal();
  const Tensor base = forward_mlm(model, ids, masked);
  for (const auto& e : model.head_slice({1, 1}).entries) {
    for (std::size_t i : e.indices) model.param(e.param).data[i] += 1.0;
  }
  EXPECT_LE(max_abs_diff(forward_mlm(model, ids, masked), base), 1e-14);
}

TEST(Model, PaddingDoesNotAffectRealPositions) {
  ModelConfig cfg = small_config();
  cfg.num_classes = 3;
  TransformerLM model(cfg);
  const std::vector<Sequence> one{{2, 7, 8, 9}};
  const std::vector<Sequence> two{{2, 7, 8, 9}, {2, 4, 5, 6, 10, 12, 13}};
  const Tensor a = forward_cls(model, one);
  const Tensor b = forward_cls(model, two);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a.at(0, c), b.at(0, c), 1e-12);
}

TEST(Model, RejectsOutOfRangeTokens) {
  TransformerLM model(small_config());
  const std::vector<std::size_t> masked{0};
  EXPECT_THROW(forward_mlm(model, Sequence{25, 1}, masked), IndexError);
  TransformerLM no_cls(small_config());
  const std::vector<Sequence> seqs{{2, 3}};
  EXPECT_THROW(forward_cls(no_cls, seqs), ConfigError);
}

TEST(Model, HeadSlicePerturbationOnlyTouchesThatHead) {
  TransformerLM model(small_config());
  const Sequence ids{2, 5, 1, 9, 4};
  const std::vector<std::size_t> masked{2};
  const MlmCapture before = capture_heads(model, ids, masked);
  TransformerLM moved = model;
  for (const auto& e : moved.head_slice({0, 0}).entries)
    for (std::size_t i : e.indices) moved.param(e.param).data[i] += 0.3;
  const MlmCapture after = capture_heads(moved, ids, masked);
  EXPECT_GT(max_abs_diff(after.heads.at({0, 0}), before.heads.at({0, 0})), 1e-6);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_EQ(after.heads.at({0, k}), before.heads.at({0, k}));
  EXPECT_GT(max_abs_diff(after.heads.at({1, 0}), before.heads.at({1, 0})), 1e-9);
}
