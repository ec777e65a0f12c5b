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
#include <filesystem>

#include "pstn/config.hpp"
#include "pstn/pipeline.hpp"

using namespace pstn;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg = load_config(std::string(PSTN_SOURCE_DIR) + "/configs/smoke.json");
  cfg.model.width = 32;
  cfg.model.ff_width = 64;
  cfg.pretrain.count = 2000;
  cfg.pretrain.train.epochs = 6;
  cfg.cda.count = 1000;
  cfg.cda.train.epochs = 3;
  cfg.eval.probes = 640;
  return cfg;
}

}  // namespace

TEST(Pipeline, CdaOnBalancedCorpusLeavesBiasInPlace) {
  ExperimentConfig cfg = small_config();
  cfg.pretrain.beta = 0.5;
  cfg.cda.beta = 0.5;
  const Workspace ws(cfg);
  const BaseModels b = build_base_models(cfg, ws);
  const double before = stereoset_score(b.f0, ws.vocab, ws.probes);
  const double after = stereoset_score(b.fa, ws.vocab, ws.probes);
  EXPECT_NEAR(after, before, 2.0);
  EXPECT_NE(b.f0.checksum(), b.fa.checksum());
}

TEST(Pipeline, CdaOnRawCorpusCollapsesToContinuedPretraining) {
  const ExperimentConfig cfg = small_config();
  const Workspace ws(cfg);
  const TransformerLM f0 = stage_pretrain(cfg, ws);
  const Corpus raw = gen_pretrain(CorpusSpec{300, 0.9, 21}, ws.lex);
  TrainConfig t = cfg.cda.train;
  t.epochs = 2;
  t.seed = 5;
  TransformerLM a = f0, c = f0;
  debias_cda(a, ws.vocab, raw, t);
  pretrain(c, ws.vocab, raw, t);
  ASSERT_EQ(a.checksum(), c.checksum());

  const Dataset data = make_task(cfg, ws.lex, 1);
  FinetuneRun none = stage_finetune(ws, with_classifier(c, data, 1), data, RegularizerSpec{}, cfg.finetune.train, 1);
  RegularizerSpec zero;
  zero.kind = RegKind::prosocial;
  zero.gamma = 0.0;
  zero.reference = std::make_shared<const ParamSnapshot>(snapshot_attention(a));
  zero.mask = HeadMask{cfg.model.layers, cfg.model.heads,
                       std::vector<bool>(cfg.model.layers * cfg.model.heads, true)};
  zero.importance = HeadMatrix(cfg.model.layers, cfg.model.heads, 1.0);
  FinetuneRun pro = stage_finetune(ws, with_classifier(a, data, 1), data, zero, cfg.finetune.train, 1);
  EXPECT_EQ(none.model.checksum(), pro.model.checksum());
  EXPECT_EQ(none.run.step_losses, pro.run.step_losses);
}

TEST(Pipeline, StageFailureKeepsEarlierArtifacts) {
  ExperimentConfig cfg = small_config();
  cfg.pretrain.train.epochs = 1;
  const std::string dir = testing::TempDir() + "pstn_pipeline_fail";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir + "/fA.ckpt");
  try {
    run_pipeline(cfg, 1, dir);
    FAIL() << "expected a stage failure";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "cda") << e.what();
  }
  EXPECT_TRUE(std::filesystem::exists(dir + "/f0.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/b0.csv"));
  EXPECT_FALSE(std::filesystem::exists(dir + "/ba.csv"));
}
