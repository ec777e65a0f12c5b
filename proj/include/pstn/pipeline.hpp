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

// Stage runners, the end-to-end debias-then-tune pipeline, the bias-level /
// dataset-size sweep and the fine-tuning method comparison.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pstn/cma.hpp"
#include "pstn/config.hpp"
#include "pstn/metrics.hpp"
#include "pstn/pacbayes.hpp"
#include "pstn/store.hpp"
#include "pstn/training.hpp"

namespace pstn {

// A stage failed at runtime; `stage()` names it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Lexicon, vocabulary and the fixed evaluation sets.
struct Workspace {
  Lexicon lex;
  Vocabulary vocab;
  std::vector<PreparedIntervention> interventions;
  std::vector<ProbeEntry> probes;

  explicit Workspace(const ExperimentConfig& cfg);
};

// ---- stages -----------------------------------------------------------------------

// The pretrained and debiased language models do not depend on the run seed.
struct BaseModels {
  TransformerLM f0;
  TransformerLM fa;
  RunArtifacts pretrain_run;
  RunArtifacts cda_run;
};

TransformerLM stage_pretrain(const ExperimentConfig& cfg, const Workspace& ws,
                             RunArtifacts* run = nullptr);
TransformerLM stage_cda(const ExperimentConfig& cfg, const Workspace& ws, const TransformerLM& f0,
                        RunArtifacts* run = nullptr);
BaseModels build_base_models(const ExperimentConfig& cfg, const Workspace& ws);

HeadEffectMatrix stage_cma(const ExperimentConfig& cfg, const Workspace& ws,
                           const TransformerLM& model, const std::string& provenance);

Dataset make_task(const ExperimentConfig& cfg, const Lexicon& lex, std::uint64_t seed);

// A copy of `model` with a freshly initialized classifier for `data`.
TransformerLM with_classifier(const TransformerLM& model, const Dataset& data, std::uint64_t seed);

// Fine-tunes to convergence with no regularizer, then estimates the noise
// variances and head importance.
struct ImportanceRun {
  TransformerLM converged;
  RunArtifacts converge_run;
  EstimateResult estimate;
  ImportanceMatrix importance;
};
ImportanceRun stage_importance(const ExperimentConfig& cfg, const Workspace& ws,
                               const TransformerLM& fa, const Dataset& data, std::uint64_t seed);

RegularizerSpec make_regularizer(const ExperimentConfig& cfg, RegKind kind, double gamma,
                                 const TransformerLM& fa, const HeadMask& mask,
                                 const ImportanceMatrix& importance, std::uint64_t seed);

// Mean L2 distance of the masked heads' attention parameters to `ref`.
double mean_eligible_distance(const TransformerLM& model, const ParamSnapshot& ref, const HeadMask& mask);

struct FinetuneRun {
  TransformerLM model;
  RunArtifacts run;
};
FinetuneRun stage_finetune(const Workspace& ws, const TransformerLM& start, const Dataset& data,
                           const RegularizerSpec& reg, const TrainConfig& train, std::uint64_t seed);

// Intrinsic scores, plus task accuracy and extrinsic bias when the model has
// a classifier.
BiasReport evaluate(const ExperimentConfig& cfg, const Workspace& ws, const TransformerLM& model,
                    ModelCategory category, std::uint64_t seed,
                    ParallelPredictions* predictions = nullptr);

nlohmann::json report_to_json(const BiasReport& r);

// ---- end to end ----------------------------------------------------------------------

struct PipelineResult {
  BaseModels base;
  HeadEffectMatrix b0;
  HeadEffectMatrix ba;
  HeadEffectMatrix bt;
  HeadMask mask;
  ImportanceRun importance;
  FinetuneRun tuned;
  std::vector<BiasReport> reports;  // pretrained, debiased, tuned
  RunManifest manifest;
};

// Pretrain, measure B0, debias, measure Ba, converge and estimate importance,
// then fine-tune the debiased model with the configured regularizer. Every
// artifact and a manifest are written to `out_dir`; a failing stage throws
// StageError and leaves the earlier artifacts in place.
PipelineResult run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed,
                            const std::string& out_dir);

// Re-runs a finished pipeline or sweep from its manifest into `out_dir` and
// returns the outputs whose hashes differ (empty on success).
std::vector<std::string> replay(const std::string& manifest_path, const std::string& out_dir);

// ---- sweep --------------------------------------------------------------------------

struct SweepOptions {
  std::vector<double> rho;
  std::vector<std::size_t> sizes;
  std::vector<std::uint64_t> seeds;
  std::size_t workers = 1;
};

// Worker count from PSTN_WORKERS (default: hardware concurrency), or 1 when
// `deterministic` is set.
std::size_t worker_count(bool deterministic);

// Runs `jobs` on a pool of `workers` threads; job i's result lands in slot i
// regardless of scheduling. The first exception is rethrown after all
// workers stop.
void run_pool(std::size_t jobs, std::size_t workers, const std::function<void(std::size_t)>& job);

// For every (rho, m, seed) cell: fine-tune the pretrained and the debiased
// model on a task sample and score all four model categories. Writes
// figure1_analog.csv and sweep_summary.csv plus a manifest.
SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opts,
                      const std::string& out_dir, const BaseModels* base = nullptr);

// ---- method comparison ----------------------------------------------------------------

struct MethodScore {
  std::string method;  // vanilla, debiased, prosocial, uniform, random_heads
  std::uint64_t seed = 0;
  double stereoset = 0.0;
  double lm = 0.0;
  double extrinsic = 0.0;
  double accuracy = 0.0;
  double eligible_distance = 0.0;  // mean L2 of eligible heads to θ^cda
  std::size_t regularized_heads = 0;
};

struct ComparisonResult {
  double pretrained_score = 0.0;
  double debiased_score = 0.0;
  std::size_t eligible_heads = 0;
  std::vector<MethodScore> scores;
  std::vector<Table3Row> table3;  // seed means

  double mean(const std::string& method, double MethodScore::*field) const;
};

// Fine-tunes with every method on the same task samples and seeds. Writes
// table3_analog.csv and methods.csv.
ComparisonResult compare_methods(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<std::string>& methods, const std::string& out_dir,
                                 const BaseModels* base = nullptr);

}  // namespace pstn
