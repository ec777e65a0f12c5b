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

// Experiment configuration loaded from JSON. Unknown keys are rejected and
// every section is validated before any stage runs.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pstn/cma.hpp"
#include "pstn/model.hpp"
#include "pstn/pacbayes.hpp"
#include "pstn/synthdata.hpp"
#include "pstn/training.hpp"

namespace pstn {

struct ModelSection {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t width = 64;
  std::size_t ff_width = 128;
  std::size_t max_len = 16;
  double init_std = 0.02;
  bool tie_lm_head = false;
};

struct CorpusStage {
  std::size_t count = 4000;
  double beta = 0.9;
  TrainConfig train;
};

struct CmaSection {
  std::size_t interventions = 64;
  EffectMode mode = EffectMode::indirect;
  MaskMode mask = MaskMode::magnitude;
};

struct TaskSection {
  TaskKind kind = TaskKind::occupation;
  std::size_t size = 2000;
  double female_proportion = 0.0;
  double label_bias = 0.8;
};

struct EstimateSection {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr_omega_q = 1e-2;
  double lr_classifier = 1e-1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::size_t samples = 1;
  double min_train_accuracy = 0.9;
  // Empty means 1/m.
  std::optional<double> lambda;
};

struct FinetuneSection {
  TrainConfig train;
  RegKind regularizer = RegKind::prosocial;
  double gamma = 0.01;
  // random_heads only; 0 means the eligible-head count of the prosocial mask.
  std::size_t random_count = 0;
};

struct EvalSection {
  std::size_t probes = 640;
  std::size_t extrinsic_pairs = 200;
};

struct SweepSection {
  std::vector<double> rho{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::size_t> sizes{100, 500, 1000, 5000, 10000};
  // Fine-tuning epochs per sweep cell.
  std::size_t epochs = 25;
};

struct ExperimentConfig {
  ModelSection model;
  CorpusStage pretrain;
  CorpusStage cda;
  CmaSection cma;
  TaskSection task;
  TrainConfig converge;
  EstimateSection estimate;
  FinetuneSection finetune;
  EvalSection eval;
  SweepSection sweep;
  std::vector<std::uint64_t> seeds{1, 42, 100};
  // Seeds the pretraining and debiasing corpora and the initial weights;
  // those models are shared by every run seed.
  std::uint64_t base_seed = 7;
  std::string output_dir = "runs";

  // Throws ConfigError.
  void validate() const;
  ModelConfig model_config(std::size_t vocab_size, std::uint64_t init_seed) const;
  NoiseConfig noise_config(std::uint64_t seed) const;
  double lambda_for(std::size_t m) const;
};

// Defaults used when a key is absent.
ExperimentConfig default_config();

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
// Throws ConfigError on unreadable files, malformed JSON or invalid values.
ExperimentConfig load_config(const std::string& path);

// Independent sub-seed for a named stage of a run.
std::uint64_t stage_seed(std::uint64_t run_seed, std::string_view stage);

}  // namespace pstn
