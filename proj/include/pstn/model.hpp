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

// Tiny pre-LayerNorm masked transformer with per-head parameter addressing,
// head-output capture and activation patching.

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pstn/autodiff.hpp"
#include "pstn/tensor.hpp"

namespace pstn {

using TokenId = std::size_t;
using Sequence = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t width = 64;
  std::size_t ff_width = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 16;
  bool tie_lm_head = false;
  // 0 means no classification head.
  std::size_t num_classes = 0;
  // Per-head output multipliers, row-major [layer][head]; empty means all 1.
  // A zero gate makes a head architecturally dead.
  std::vector<double> head_gates;
  double init_std = 0.02;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t head_dim() const { return width / heads; }
  double gate(std::size_t layer, std::size_t head) const {
    return head_gates.empty() ? 1.0 : head_gates[layer * heads + head];
  }
};

struct HeadIndex {
  std::size_t layer = 0;
  std::size_t head = 0;
  auto operator<=>(const HeadIndex&) const = default;
};

std::vector<HeadIndex> all_heads(const ModelConfig& cfg);

// Per-position head outputs of one forward pass: [seq_len, head_dim] each.
using HeadActivationCache = std::map<HeadIndex, Tensor>;

template <class T>
struct LayerWeights {
  T ln1_gain, ln1_bias;
  T wq, bq, wk, bk, wv, bv, wo;
  T ln2_gain, ln2_bias;
  T ff_w1, ff_b1, ff_w2, ff_b2;

  template <class Self, class F>
  static void visit(Self& self, const std::string& p, F&& f) {
    f(p + "ln1.gain", self.ln1_gain);
    f(p + "ln1.bias", self.ln1_bias);
    f(p + "attn.wq", self.wq);
    f(p + "attn.bq", self.bq);
    f(p + "attn.wk", self.wk);
    f(p + "attn.bk", self.bk);
    f(p + "attn.wv", self.wv);
    f(p + "attn.bv", self.bv);
    f(p + "attn.wo", self.wo);
    f(p + "ln2.gain", self.ln2_gain);
    f(p + "ln2.bias", self.ln2_bias);
    f(p + "ff.w1", self.ff_w1);
    f(p + "ff.b1", self.ff_b1);
    f(p + "ff.w2", self.ff_w2);
    f(p + "ff.b2", self.ff_b2);
  }
};

// All model parameters. T is Tensor for storage and ad::Var once bound to a
// tape. visit() enumerates present parameters in canonical order.
template <class T>
struct Weights {
  T tok_emb, pos_emb;
  std::vector<LayerWeights<T>> layers;
  T lnf_gain, lnf_bias;
  T lm_w, lm_b;
  T cls_w, cls_b;
  bool tied_lm = false;
  bool has_cls = false;

  template <class F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <class F>
  void visit(F&& f) const { visit_impl(*this, f); }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("tok_emb"), self.tok_emb);
    f(std::string("pos_emb"), self.pos_emb);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      LayerWeights<T>::visit(self.layers[l], "layers." + std::to_string(l) + ".", f);
    }
    f(std::string("lnf.gain"), self.lnf_gain);
    f(std::string("lnf.bias"), self.lnf_bias);
    if (!self.tied_lm) f(std::string("lm.w"), self.lm_w);
    f(std::string("lm.b"), self.lm_b);
    if (self.has_cls) {
      f(std::string("cls.w"), self.cls_w);
      f(std::string("cls.b"), self.cls_b);
    }
  }
};

bool is_embedding_param(const std::string& name);
bool is_attention_param(const std::string& name);
bool is_lm_head_param(const std::string& name);
bool is_classifier_param(const std::string& name);

// Flat element indices of one head's parameters inside named tensors.
struct HeadSlice {
  struct Entry {
    std::string param;
    std::vector<std::size_t> indices;
  };
  HeadIndex head;
  std::vector<Entry> entries;
  std::size_t count() const;
};

class TransformerLM {
 public:
  explicit TransformerLM(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  Weights<Tensor>& weights() { return w_; }
  const Weights<Tensor>& weights() const { return w_; }

  // Replaces (or adds) the classification head with a fresh initialization.
  void attach_classifier(std::size_t num_classes, std::uint64_t seed);
  void set_head_gates(std::vector<double> gates);

  std::vector<std::string> param_names() const;
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t param_count() const;
  std::size_t attention_param_count() const;

  // Exactly the query/key/value columns and output-projection rows of `h`.
  HeadSlice head_slice(HeadIndex h) const;

  void freeze_embeddings();
  bool is_frozen(const std::string& name) const { return frozen_.count(name) > 0; }
  const std::set<std::string>& frozen() const { return frozen_; }
  void set_frozen(std::set<std::string> names) { frozen_ = std::move(names); }

  // FNV-1a over every parameter in canonical order.
  std::uint64_t checksum() const;

 private:
  ModelConfig cfg_;
  Weights<Tensor> w_;
  std::set<std::string> frozen_;
};

// ---- forward passes ---------------------------------------------------------

// Sequences right-padded with kPadId to a common length.
struct PaddedBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> ids;
  std::vector<std::size_t> lengths;
};

PaddedBatch make_batch(std::span<const Sequence> seqs, std::size_t max_len);

struct ForwardHooks {
  // Replacement head outputs, applied to sequence 0 of the batch.
  const std::map<HeadIndex, Tensor>* patches = nullptr;
  // Receives sequence 0's head outputs.
  HeadActivationCache* capture = nullptr;
};

// Binds every stored parameter as a leaf. Leaves track gradients only when
// `track(name)` returns true.
Weights<ad::Var> bind_weights(ad::Tape& tape, const TransformerLM& model,
                              const std::function<bool(const std::string&)>& track);

// Binds parameters through a caller-supplied factory (e.g. noisy copies).
Weights<ad::Var> bind_weights_with(
    ad::Tape& tape, const TransformerLM& model,
    const std::function<ad::Var(const std::string&, const Tensor&)>& make);

// Final-LayerNorm hidden states, [batch*seq_len, width].
ad::Var encode(ad::Tape& tape, const Weights<ad::Var>& w, const ModelConfig& cfg,
               const PaddedBatch& batch, const ForwardHooks& hooks = {});

// Vocabulary logits at the given flat rows of `hidden`.
ad::Var lm_logits(const Weights<ad::Var>& w, ad::Var hidden,
                  std::span<const std::size_t> rows);

// Class logits from the first position of every sequence.
ad::Var cls_logits(const Weights<ad::Var>& w, ad::Var hidden,
                   const PaddedBatch& batch);

// Logits over the vocabulary at `masked_positions` of one sequence.
Tensor forward_mlm(const TransformerLM& model, const Sequence& ids,
                   std::span<const std::size_t> masked_positions);

struct MlmCapture {
  Tensor logits;
  HeadActivationCache heads;
};
MlmCapture capture_heads(const TransformerLM& model, const Sequence& ids,
                         std::span<const std::size_t> masked_positions);

// forward_mlm with the listed heads' outputs replaced before the output
// projection. Throws PatchError naming the head on a shape mismatch.
Tensor forward_patched(const TransformerLM& model, const Sequence& ids,
                       std::span<const std::size_t> masked_positions,
                       const std::map<HeadIndex, Tensor>& patches);

// Class logits, one row per sequence. ConfigError without a classifier.
Tensor forward_cls(const TransformerLM& model, std::span<const Sequence> seqs);

class PatchError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

}  // namespace pstn
