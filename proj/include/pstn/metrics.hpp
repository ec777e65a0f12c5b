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

// Intrinsic and extrinsic bias metrics, correlation, and sweep reports.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pstn/model.hpp"
#include "pstn/synthdata.hpp"

namespace pstn {

// ---- intrinsic ------------------------------------------------------------------

struct ProbeProbs {
  double stereo = 0.0;
  double anti = 0.0;
  double meaningless = 0.0;
};

// Masked-slot probabilities of each probe's three completions.
std::vector<ProbeProbs> probe_probabilities(const TransformerLM& model, const Vocabulary& vocab,
                                            const std::vector<ProbeEntry>& probes);

// 100 x share of probes preferring the stereotypical completion; ties 0.5.
double stereoset_score(const std::vector<ProbeProbs>& probs);
// 100 x share of probes where a meaningful completion beats the meaningless
// one; ties 0.5.
double lm_score(const std::vector<ProbeProbs>& probs);

double stereoset_score(const TransformerLM& model, const Vocabulary& vocab,
                       const std::vector<ProbeEntry>& probes);
double lm_score(const TransformerLM& model, const Vocabulary& vocab,
                const std::vector<ProbeEntry>& probes);

// ---- extrinsic ------------------------------------------------------------------

struct ParallelPredictions {
  std::vector<std::size_t> labels;
  std::vector<std::size_t> male_pred;
  std::vector<std::size_t> female_pred;
  std::vector<double> male_p_neutral;
  std::vector<double> female_p_neutral;
  std::size_t num_classes = 0;
};

ParallelPredictions predict_parallel(const TransformerLM& model, const Vocabulary& vocab,
                                     const std::vector<ParallelPair>& pairs);

// |TPR_male - TPR_female|; the positive class for binary tasks, the mean
// per-class gap otherwise (classes without support in both sets skipped).
double tpr_gap(const std::vector<std::size_t>& male_labels,
               const std::vector<std::size_t>& male_pred,
               const std::vector<std::size_t>& female_labels,
               const std::vector<std::size_t>& female_pred, std::size_t num_classes);
double tpr_gap(const ParallelPredictions& p);

// |share predicted neutral among male - among female|.
double neutral_diff(const std::vector<std::size_t>& male_pred,
                    const std::vector<std::size_t>& female_pred, std::size_t neutral_label);
// 1 - share of pairs with identical predictions.
double parallel_consistency_bias(const std::vector<std::size_t>& male_pred,
                                 const std::vector<std::size_t>& female_pred);

// The extrinsic score used for a task kind: TPR gap for occupation, neutral
// difference for entailment, parallel inconsistency for similarity.
std::string extrinsic_metric_name(TaskKind kind);
double extrinsic_bias(TaskKind kind, const ParallelPredictions& p);

// example_id,gender_flag,label,prediction,p_neutral
void write_predictions_csv(const std::string& path, const ParallelPredictions& p);
ParallelPredictions read_predictions_csv(const std::string& path, std::size_t num_classes);

// Pearson r; empty for mismatched or short inputs or zero variance.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

// ---- reports ----------------------------------------------------------------------

enum class ModelCategory { pretrained, debiased, fine_tuned, debiased_fine_tuned };
const char* to_string(ModelCategory c);
ModelCategory parse_model_category(std::string_view s);
inline constexpr ModelCategory kAllCategories[] = {
    ModelCategory::pretrained, ModelCategory::debiased, ModelCategory::fine_tuned,
    ModelCategory::debiased_fine_tuned};

struct BiasReport {
  ModelCategory category = ModelCategory::pretrained;
  double stereoset = 0.0;
  double lm = 0.0;
  std::map<std::string, double> extrinsic;
  double accuracy = 0.0;
  std::uint64_t seed = 0;
};

struct SweepRow {
  ModelCategory category = ModelCategory::pretrained;
  double rho = 0.0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  double stereoset = 0.0;
  double lm = 0.0;
};

struct SweepCell {
  ModelCategory category = ModelCategory::pretrained;
  double rho = 0.0;
  std::size_t m = 0;
  double stereoset_mean = 0.0;
  double stereoset_sd = 0.0;
  double lm_mean = 0.0;
  double lm_sd = 0.0;
  std::size_t seeds = 0;
};

// Seed mean and sample standard deviation per (category, rho, m), ordered
// by category, then rho, then m.
std::vector<SweepCell> aggregate(const std::vector<SweepRow>& rows);
const SweepCell& find_cell(const std::vector<SweepCell>& cells, ModelCategory c, double rho,
                           std::size_t m);

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepCell> cells;
};

// figure1_analog.csv: model_category,rho,m,seed,stereoset,lm_score
void write_figure1_csv(const std::string& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_figure1_csv(const std::string& path);

// sweep_summary.csv: model_category,rho,m,seeds,stereoset_mean,stereoset_sd,lm_mean,lm_sd
void write_sweep_summary_csv(const std::string& path, const std::vector<SweepCell>& cells);

struct Table3Row {
  std::string method;
  std::string task;
  double debiased_score = 0.0;
  double finetuned_score = 0.0;
  double delta() const { return finetuned_score - debiased_score; }
};

// table3_analog.csv: method,task,debiased_score,finetuned_score,delta
void write_table3_csv(const std::string& path, const std::vector<Table3Row>& rows);

std::string format_double(double v);

}  // namespace pstn
