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

#include "pstn/training.hpp"

using namespace pstn;

namespace {

ModelConfig tiny(std::size_t vocab, std::size_t classes) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.ff_width = 16;
  cfg.vocab_size = vocab;
  cfg.max_len = 16;
  cfg.init_std = 0.1;
  cfg.init_seed = 6;
  cfg.num_classes = classes;
  return cfg;
}

struct Bench {
  Lexicon lex = default_lexicon();
  Vocabulary vocab{lex};
  Dataset data;
  TransformerLM model{tiny(vocab.size(), 0)};
  Bench() {
    TaskSpec spec;
    spec.size = 96;
    spec.seed = 4;
    data = gen_task(spec, lex);
    model.attach_classifier(data.num_classes, 3);
  }
  TrainConfig train(std::size_t epochs) const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 32;
    c.seed = 9;
    c.patience = 0;
    c.adam.lr = 1e-3;
    return c;
  }
};

// Squared distance of head (l, k) from explicit block indexing:
// wq/wk/wv columns, bq/bk/bv entries and wo rows of the head.
double oracle_head_distance(const TransformerLM& m, const ParamSnapshot& ref, std::size_t l, std::size_t k) {
  const std::size_t d = m.config().width, dh = m.config().head_dim();
  const std::string p = "layers." + std::to_string(l) + ".attn.";
  double s = 0;
  for (const char* w : {"wq", "wk", "wv"}) {
    const Tensor &a = m.param(p + w), &b = ref.at(p + w);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = k * dh; c < (k + 1) * dh; ++c) s += std::pow(a.at(r, c) - b.at(r, c), 2);
  }
  for (const char* bn : {"bq", "bk", "bv"}) {
    const Tensor &a = m.param(p + bn), &b = ref.at(p + bn);
    for (std::size_t c = k * dh; c < (k + 1) * dh; ++c) s += std::pow(a.data[c] - b.data[c], 2);
  }
  const Tensor &a = m.param(p + "wo"), &b = ref.at(p + "wo");
  for (std::size_t r = k * dh; r < (k + 1) * dh; ++r)
    for (std::size_t c = 0; c < d; ++c) s += std::pow(a.at(r, c) - b.at(r, c), 2);
  return s;
}

}  // namespace

TEST(Regularizer, ProsocialWeightsNormalizeImportanceOverEligibleHeads) {
  RegularizerSpec spec;
  spec.kind = RegKind::prosocial;
  spec.gamma = 2.0;  // gamma / (L K) = 1
  spec.mask = HeadMask{1, 2, {true, true}};
  spec.importance = HeadMatrix(1, 2);
  spec.importance.values = {1.0, 3.0};
  const HeadMatrix c = regularizer_weights(spec, 1, 2);
  EXPECT_DOUBLE_EQ(c.values[0], 0.25);
  EXPECT_DOUBLE_EQ(c.values[1], 0.75);

  spec.mask.values = {false, true};
  EXPECT_DOUBLE_EQ(regularizer_weights(spec, 1, 2).values[1], 1.0);
  spec.mask.values = {false, false};
  std::vector<std::string> warnings;
  EXPECT_EQ(regularizer_weights(spec, 1, 2, &warnings).values, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Regularizer, UniformAndRandomHeads) {
  RegularizerSpec spec;
  spec.kind = RegKind::uniform;
  spec.gamma = 0.8;
  for (double v : regularizer_weights(spec, 2, 4).values) EXPECT_DOUBLE_EQ(v, 0.1);
  spec.kind = RegKind::random_heads;
  spec.random_count = 3;
  spec.random_seed = 11;
  const HeadMatrix c = regularizer_weights(spec, 2, 4);
  std::size_t on = 0;
  for (double v : c.values) on += v == 0.1;
  EXPECT_EQ(on, 3u);
  EXPECT_EQ(random_head_subset(2, 4, 3, 11), random_head_subset(2, 4, 3, 11));
  EXPECT_EQ(random_head_subset(2, 4, 8, 1).size(), 8u);
}

TEST(Regularizer, ValueMatchesBruteForceOracle) {
  Bench s;
  auto ref = std::make_shared<const ParamSnapshot>(snapshot_attention(s.model));
  TransformerLM moved = s.model;
  RngStream r(2);
  for (const auto& name : moved.param_names())
    for (double& v : moved.param(name).data) v += 0.05 * r.normal();
  RegularizerSpec spec;
  spec.kind = RegKind::prosocial;
  spec.gamma = 0.7;
  spec.reference = ref;
  spec.mask = HeadMask{2, 2, {true, false, true, true}};
  spec.importance = HeadMatrix(2, 2);
  spec.importance.values = {2.0, 5.0, 1.0, 1.0};
  const double scale = 0.7 / 4.0;
  const double expect = scale * (2.0 / 4.0 * oracle_head_distance(moved, *ref, 0, 0) +
                                 1.0 / 4.0 * oracle_head_distance(moved, *ref, 1, 0) +
                                 1.0 / 4.0 * oracle_head_distance(moved, *ref, 1, 1));
  EXPECT_NEAR(regularizer_value(moved, spec), expect, 1e-12 * expect);
  EXPECT_EQ(regularizer_value(s.model, spec), 0.0);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t k = 0; k < 2; ++k)
      EXPECT_NEAR(head_sq_distance(moved, *ref, {l, k}), oracle_head_distance(moved, *ref, l, k), 1e-12);
}

TEST(Finetune, ZeroGammaTraceIdenticalToNoRegularizer) {
  Bench s;
  TransformerLM a = s.model, b = s.model;
  RegularizerSpec none;
  RegularizerSpec pro;
  pro.kind = RegKind::prosocial;
  pro.gamma = 0.0;
  pro.reference = std::make_shared<const ParamSnapshot>(snapshot_attention(s.model));
  pro.mask = HeadMask{2, 2, {true, true, false, true}};
  pro.importance = HeadMatrix(2, 2, 1.0);
  const RunArtifacts ra = finetune(a, s.vocab, s.data, s.train(3), none);
  const RunArtifacts rb = finetune(b, s.vocab, s.data, s.train(3), pro);
  EXPECT_EQ(ra.step_losses, rb.step_losses);
  EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(Finetune, ZeroEpochsLeaveParametersUnchanged) {
  Bench s;
  TransformerLM m = s.model;
  finetune(m, s.vocab, s.data, s.train(0), RegularizerSpec{});
  EXPECT_EQ(m.checksum(), s.model.checksum());
}

TEST(Finetune, EmbeddingsFrozenAndLossDecreases) {
  Bench s;
  TransformerLM m = s.model;
  const RunArtifacts r = finetune(m, s.vocab, s.data, s.train(8), RegularizerSpec{});
  EXPECT_EQ(m.param("tok_emb"), s.model.param("tok_emb"));
  EXPECT_EQ(m.param("lm.w"), s.model.param("lm.w"));
  EXPECT_NE(m.param("cls.w"), s.model.param("cls.w"));
  ASSERT_EQ(r.epoch_losses.size(), 8u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
}

TEST(Finetune, HugeGammaPinsEligibleHeads) {
  Bench s;
  TransformerLM m = s.model;
  RegularizerSpec pro;
  pro.kind = RegKind::prosocial;
  pro.gamma = 1e6;
  pro.reference = std::make_shared<const ParamSnapshot>(snapshot_attention(s.model));
  pro.mask = HeadMask{2, 2, {true, false, false, false}};
  pro.importance = HeadMatrix(2, 2, 1.0);
  TrainConfig t = s.train(3);
  t.adam.lr = 5e-5;
  finetune(m, s.vocab, s.data, t, pro);
  const double pinned = std::sqrt(head_sq_distance(m, *pro.reference, {0, 0}));
  EXPECT_LT(pinned, 1e-3);
  EXPECT_GT(std::sqrt(head_sq_distance(m, *pro.reference, {0, 1})), 10 * pinned);
}

TEST(Finetune, Errors) {
  Bench s;
  TransformerLM no_cls(tiny(s.vocab.size(), 0));
  EXPECT_THROW(finetune(no_cls, s.vocab, s.data, s.train(1), RegularizerSpec{}), ConfigError);
  TransformerLM wrong(tiny(s.vocab.size(), 5));
  EXPECT_THROW(finetune(wrong, s.vocab, s.data, s.train(1), RegularizerSpec{}), ConfigError);
  RegularizerSpec bad;
  bad.kind = RegKind::prosocial;
  bad.gamma = -1.0;
  TransformerLM m = s.model;
  EXPECT_THROW(finetune(m, s.vocab, s.data, s.train(1), bad), ConfigError);
  EXPECT_THROW(parse_reg_kind("strong"), ConfigError);
}

TEST(Pretrain, MlmLossDecreases) {
  Bench s;
  TransformerLM m(tiny(s.vocab.size(), 0));
  const Corpus c = gen_pretrain(CorpusSpec{200, 0.9, 1}, s.lex);
  const double before = mlm_loss(m, s.vocab, c, 0.15, 5);
  TrainConfig cfg = s.train(3);
  pretrain(m, s.vocab, c, cfg);
  EXPECT_LT(mlm_loss(m, s.vocab, c, 0.15, 5), before);
}
