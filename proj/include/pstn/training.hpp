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

// MLM pretraining, counterfactual debiasing and downstream fine-tuning with
// an optional anchor regularizer on attention heads.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pstn/cma.hpp"
#include "pstn/head_matrix.hpp"
#include "pstn/model.hpp"
#include "pstn/optim.hpp"
#include "pstn/synthdata.hpp"

namespace pstn {

struct TrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 64;
  AdamWConfig adam;
  std::uint64_t seed = 0;
  // MLM only: fraction of non-special tokens replaced by [MASK].
  double mask_prob = 0.15;
  // Fine-tuning only: early stopping on held-out accuracy; 0 disables.
  std::size_t patience = 5;
  double holdout_fraction = 0.1;

  void validate() const;
};

struct RunArtifacts {
  std::vector<double> step_losses;   // total objective per optimizer step
  std::vector<double> epoch_losses;  // mean objective per epoch
  std::vector<double> epoch_regularizer;
  std::vector<double> epoch_val_accuracy;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::vector<std::string> warnings;
};

std::vector<Sequence> encode_all(const Vocabulary& vocab, const std::vector<std::string>& texts,
                                 std::size_t max_len);

// Masked-LM training on `corpus`; classifier parameters are left untouched.
RunArtifacts pretrain(TransformerLM& model, const Vocabulary& vocab, const Corpus& corpus,
                      const TrainConfig& cfg);
// Continued MLM training on a counterfactually augmented corpus.
RunArtifacts debias_cda(TransformerLM& model, const Vocabulary& vocab, const Corpus& cda_corpus,
                        const TrainConfig& cfg);

// Mean masked-LM cross-entropy over a corpus with a fixed masking draw.
double mlm_loss(const TransformerLM& model, const Vocabulary& vocab, const Corpus& corpus,
                double mask_prob, std::uint64_t seed);

// ---- regularizer --------------------------------------------------------------

enum class RegKind { none, prosocial, uniform, random_heads };
const char* to_string(RegKind k);
RegKind parse_reg_kind(std::string_view s);

// Frozen copy of a model's attention parameters.
using ParamSnapshot = std::map<std::string, Tensor>;
ParamSnapshot snapshot_attention(const TransformerLM& model);

struct RegularizerSpec {
  RegKind kind = RegKind::none;
  double gamma = 0.0;
  std::shared_ptr<const ParamSnapshot> reference;  // θ^cda
  HeadMask mask;                                   // prosocial eligibility
  HeadMatrix importance;                           // a^G
  // random_heads: how many heads to regularize, and the draw seed.
  std::size_t random_count = 0;
  std::uint64_t random_seed = 0;

  void validate(const ModelConfig& cfg) const;
};

// Per-head coefficients c_lk so that the regularizer equals
// sum_lk c_lk * ||θ^A_lk - θ^cda_lk||^2. Adds a warning when a prosocial
// mask selects no head.
HeadMatrix regularizer_weights(const RegularizerSpec& spec, std::size_t layers, std::size_t heads,
                               std::vector<std::string>* warnings = nullptr);

// Heads chosen by the random_heads ablation.
std::vector<HeadIndex> random_head_subset(std::size_t layers, std::size_t heads, std::size_t count,
                                          std::uint64_t seed);

double regularizer_value(const TransformerLM& model, const RegularizerSpec& spec);

// Squared L2 distance of head h's attention parameters to the reference.
double head_sq_distance(const TransformerLM& model, const ParamSnapshot& ref, HeadIndex h);

// ---- fine-tuning ------------------------------------------------------------------

// Parameters updated by fine-tuning: everything except embeddings and the
// LM head.
bool finetune_trainable(const std::string& name);

// Cross-entropy plus the regularizer. Requires a classifier; freezes the
// embeddings. Restores the parameters of the best held-out epoch.
RunArtifacts finetune(TransformerLM& model, const Vocabulary& vocab, const Dataset& data,
                      const TrainConfig& cfg, const RegularizerSpec& reg);

// Class probabilities, one row per sequence.
Tensor predict_proba(const TransformerLM& model, const std::vector<Sequence>& seqs);
double accuracy(const TransformerLM& model, const std::vector<Sequence>& seqs,
                const std::vector<std::size_t>& labels);

}  // namespace pstn
