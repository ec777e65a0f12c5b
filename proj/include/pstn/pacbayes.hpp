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

// Post-training noise-variance estimation and head-level generalization
// importance.

#include <cstdint>
#include <string>
#include <vector>

#include "pstn/head_matrix.hpp"
#include "pstn/model.hpp"
#include "pstn/synthdata.hpp"

namespace pstn {

// Per-parameter log-variances over the fine-tunable tensors, laid out as the
// concatenation of `names` in canonical order.
struct NoiseState {
  std::vector<std::string> names;
  std::vector<std::size_t> offsets;  // start of each tensor in q / p
  std::vector<double> q;             // posterior log-variance (learned)
  std::vector<double> p;             // prior log-variance (fixed)
  std::vector<bool> classifier;      // per tensor: adapted classification layer
  double lambda = 0.0;

  std::size_t size() const { return q.size(); }
  std::size_t offset_of(const std::string& name) const;
};

// Smallest variance used when a weight is exactly zero.
inline constexpr double kNoiseVarianceFloor = 1e-12;

// q = p = log(max(0.001 * |θ|, 1e-12)) for every fine-tunable parameter.
NoiseState init_noise(const TransformerLM& model, double lambda = 0.0);

// sum_i (p_i - q_i)/2 + exp(q_i - p_i)/2 - 1/2
double kl_term(const NoiseState& noise);

struct NoiseConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr_pretrained = 1e-2;  // learning rate for q of pretrained layers
  double lr_classifier = 1e-1;  // learning rate for q of the classifier
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::size_t samples = 1;  // noise draws per step
  // Below this training accuracy the model is flagged as not converged.
  double min_train_accuracy = 0.9;
  std::uint64_t seed = 0;
  void validate() const;
};

struct EstimateResult {
  NoiseState noise;
  std::vector<double> epoch_objective;  // mean E_gen estimate per epoch
  double train_accuracy = 0.0;
  double final_kl = 0.0;
  double final_train_loss = 0.0;  // mean perturbed loss over the last epoch
  std::vector<std::string> warnings;
};

// Minimizes the mean perturbed cross-entropy plus lambda * KL over q only.
// The model is never modified.
EstimateResult estimate(const TransformerLM& model, const Vocabulary& vocab, const Dataset& data,
                        NoiseState init, const NoiseConfig& cfg);

// Monte Carlo mean and standard error of the perturbed loss on one batch.
struct LossSample {
  double mean = 0.0;
  double std_error = 0.0;
};
LossSample perturbed_loss(const TransformerLM& model, const std::vector<Sequence>& seqs,
                          const std::vector<std::size_t>& labels, const NoiseState& noise,
                          std::size_t draws, std::uint64_t seed);

struct ImportanceMatrix {
  HeadMatrix heads;                 // a^G
  std::vector<double> per_param;    // 1 / exp(q_i)
};

ImportanceMatrix head_importance(const NoiseState& noise, const TransformerLM& model);

// Mean exp(q) over a head's parameters.
double head_mean_variance(const NoiseState& noise, const TransformerLM& model, HeadIndex h);

// train_loss + sqrt((log(1/delta) + kl) / (2 m)); reported, not optimized.
double pac_bayes_bound(double train_loss, double kl, std::size_t m, double delta = 0.05);

}  // namespace pstn
