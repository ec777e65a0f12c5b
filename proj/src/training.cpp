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

#include "pstn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pstn/rng.hpp"

namespace pstn {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) throw ConfigError("mask_prob must lie in (0, 1]");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must lie in [0, 1)");
  }
  if (!(adam.lr >= 0.0) || !(adam.eps > 0.0) || !(adam.weight_decay >= 0.0)) {
    throw ConfigError("optimizer hyperparameters out of range");
  }
}

std::vector<Sequence> encode_all(const Vocabulary& vocab, const std::vector<std::string>& texts,
                                 std::size_t max_len) {
  std::vector<Sequence> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    out.push_back(vocab.encode(t));
    if (out.back().empty() || out.back().size() > max_len) {
      throw DimensionError("sentence '" + t + "' has " + std::to_string(out.back().size()) +
                           " tokens; max length is " + std::to_string(max_len));
    }
  }
  return out;
}

namespace {

void check_vocab(const TransformerLM& model, const Vocabulary& vocab) {
  if (model.config().vocab_size != vocab.size()) {
    throw ConfigError("model vocabulary (" + std::to_string(model.config().vocab_size) +
                      ") does not match the data vocabulary (" + std::to_string(vocab.size()) +
                      ")");
  }
}

// Tensors updated by one training run, in canonical order.
struct TrainableSet {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
};

TrainableSet collect_trainable(TransformerLM& model,
                               const std::function<bool(const std::string&)>& pred) {
  TrainableSet s;
  model.weights().visit([&](const std::string& name, Tensor& t) {
    if (pred(name) && !model.is_frozen(name)) {
      s.names.push_back(name);
      s.tensors.push_back(&t);
    }
  });
  return s;
}

// Binds the model, tracking exactly the trainable tensors, and returns their
// Vars in the same order.
Weights<ad::Var> bind_trainable(ad::Tape& tape, const TransformerLM& model,
                                const TrainableSet& set, std::vector<ad::Var>& tracked) {
  std::size_t next = 0;
  Weights<ad::Var> w = bind_weights_with(tape, model, [&](const std::string& name, const Tensor& t) {
    const bool track = next < set.names.size() && set.names[next] == name;
    ad::Var v = tape.leaf(t, track);
    if (track) {
      tracked.push_back(v);
      ++next;
    }
    return v;
  });
  return w;
}

void apply_step(AdamW& opt, const ad::Tape& tape, const TrainableSet& set,
                const std::vector<ad::Var>& tracked, std::vector<std::vector<double>>& zero) {
  std::vector<ParamSlot> slots;
  slots.reserve(set.tensors.size());
  for (std::size_t i = 0; i < set.tensors.size(); ++i) {
    const auto& g = tape.grad(tracked[i]);
    std::span<const double> grad;
    if (g.empty()) {
      zero[i].assign(set.tensors[i]->size(), 0.0);
      grad = zero[i];
    } else {
      grad = g;
    }
    slots.push_back({set.tensors[i]->span(), grad, 1.0});
  }
  opt.step(slots);
}

std::vector<std::size_t> permutation(std::size_t n, RngStream rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  return order;
}

struct MaskedBatch {
  std::vector<Sequence> inputs;
  std::vector<std::size_t> positions;  // (sequence, position) pairs, flattened later
  std::vector<std::size_t> seq_of;
  std::vector<std::size_t> targets;
};

// Masks non-[CLS] tokens with probability p; every sequence gets at least one.
MaskedBatch mask_batch(const std::vector<const Sequence*>& seqs, TokenId mask_id, double p,
                       RngStream& rng) {
  MaskedBatch mb;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    Sequence s = *seqs[b];
    std::vector<std::size_t> chosen;
    for (std::size_t i = 1; i < s.size(); ++i)
      if (rng.bernoulli(p)) chosen.push_back(i);
    if (chosen.empty() && s.size() > 1) chosen.push_back(1 + rng.uniform_index(s.size() - 1));
    for (std::size_t i : chosen) {
      mb.seq_of.push_back(b);
      mb.positions.push_back(i);
      mb.targets.push_back(s[i]);
      s[i] = mask_id;
    }
    mb.inputs.push_back(std::move(s));
  }
  return mb;
}

RunArtifacts train_mlm(TransformerLM& model, const Vocabulary& vocab, const Corpus& corpus,
                       const TrainConfig& cfg) {
  cfg.validate();
  check_vocab(model, vocab);
  if (corpus.empty()) throw ContractError("MLM training needs a non-empty corpus");
  const auto seqs = encode_all(vocab, corpus, model.config().max_len);
  TrainableSet set = collect_trainable(model, [](const std::string& n) {
    return !is_classifier_param(n);
  });
  AdamW opt(cfg.adam);
  std::vector<std::vector<double>> zero(set.tensors.size());
  RngStream root(cfg.seed);
  RngStream mask_rng = root.fork(7);
  RunArtifacts art;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(seqs.size(), root.fork(1000 + epoch));
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sequence*> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(&seqs[order[i]]);
      MaskedBatch mb = mask_batch(chunk, vocab.mask_id(), cfg.mask_prob, mask_rng);
      if (mb.targets.empty()) continue;
      ad::Tape tape;
      std::vector<ad::Var> tracked;
      auto w = bind_trainable(tape, model, set, tracked);
      PaddedBatch batch = make_batch(mb.inputs, model.config().max_len);
      std::vector<std::size_t> rows(mb.positions.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        rows[i] = mb.seq_of[i] * batch.seq_len + mb.positions[i];
      ad::Var hidden = encode(tape, w, model.config(), batch);
      ad::Var loss = ad::cross_entropy(lm_logits(w, hidden, rows), mb.targets);
      tape.backward(loss);
      apply_step(opt, tape, set, tracked, zero);
      art.step_losses.push_back(loss.value().data[0]);
      total += loss.value().data[0];
      ++steps;
    }
    art.epoch_losses.push_back(steps ? total / static_cast<double>(steps) : 0.0);
    ++art.epochs_run;
  }
  art.best_epoch = art.epochs_run;
  return art;
}

}  // namespace

RunArtifacts pretrain(TransformerLM& model, const Vocabulary& vocab, const Corpus& corpus,
                      const TrainConfig& cfg) {
  return train_mlm(model, vocab, corpus, cfg);
}

RunArtifacts debias_cda(TransformerLM& model, const Vocabulary& vocab, const Corpus& cda_corpus,
                        const TrainConfig& cfg) {
  return train_mlm(model, vocab, cda_corpus, cfg);
}

double mlm_loss(const TransformerLM& model, const Vocabulary& vocab, const Corpus& corpus,
                double mask_prob, std::uint64_t seed) {
  check_vocab(model, vocab);
  if (corpus.empty()) throw ContractError("mlm_loss needs a non-empty corpus");
  const auto seqs = encode_all(vocab, corpus, model.config().max_len);
  RngStream rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < seqs.size(); start += kChunk) {
    std::vector<const Sequence*> chunk;
    for (std::size_t i = start; i < std::min(seqs.size(), start + kChunk); ++i)
      chunk.push_back(&seqs[i]);
    MaskedBatch mb = mask_batch(chunk, vocab.mask_id(), mask_prob, rng);
    if (mb.targets.empty()) continue;
    ad::Tape tape;
    auto w = bind_weights(tape, model, [](const std::string&) { return false; });
    PaddedBatch batch = make_batch(mb.inputs, model.config().max_len);
    std::vector<std::size_t> rows(mb.positions.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      rows[i] = mb.seq_of[i] * batch.seq_len + mb.positions[i];
    ad::Var hidden = encode(tape, w, model.config(), batch);
    ad::Var loss = ad::cross_entropy(lm_logits(w, hidden, rows), mb.targets);
    total += loss.value().data[0] * static_cast<double>(rows.size());
    count += rows.size();
  }
  return total / static_cast<double>(count);
}

// ---- regularizer -------------------------------------------------------------------

const char* to_string(RegKind k) {
  switch (k) {
    case RegKind::none: return "none";
    case RegKind::prosocial: return "prosocial";
    case RegKind::uniform: return "uniform";
    case RegKind::random_heads: return "random_heads";
  }
  return "?";
}

RegKind parse_reg_kind(std::string_view s) {
  if (s == "none") return RegKind::none;
  if (s == "prosocial") return RegKind::prosocial;
  if (s == "uniform") return RegKind::uniform;
  if (s == "random_heads") return RegKind::random_heads;
  throw ConfigError("unknown regularizer kind '" + std::string(s) + "'");
}

ParamSnapshot snapshot_attention(const TransformerLM& model) {
  ParamSnapshot snap;
  model.weights().visit([&](const std::string& name, const Tensor& t) {
    if (is_attention_param(name)) snap.emplace(name, t);
  });
  return snap;
}

void RegularizerSpec::validate(const ModelConfig& cfg) const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and >= 0");
  if (kind == RegKind::none) return;
  if (!reference) throw ConfigError(std::string(to_string(kind)) + " regularizer needs θ^cda");
  if (kind == RegKind::prosocial) {
    if (mask.layers != cfg.layers || mask.heads != cfg.heads) {
      throw ConfigError("prosocial regularizer needs a layers x heads eligibility mask");
    }
    if (importance.layers != cfg.layers || importance.heads != cfg.heads) {
      throw ConfigError("prosocial regularizer needs a layers x heads importance matrix");
    }
  }
  if (kind == RegKind::random_heads && random_count > cfg.layers * cfg.heads) {
    throw ConfigError("random_heads count exceeds the number of heads");
  }
}

std::vector<HeadIndex> random_head_subset(std::size_t layers, std::size_t heads, std::size_t count,
                                          std::uint64_t seed) {
  std::vector<std::size_t> ids(layers * heads);
  std::iota(ids.begin(), ids.end(), 0);
  RngStream(seed).shuffle(ids);
  ids.resize(std::min(count, ids.size()));
  std::sort(ids.begin(), ids.end());
  std::vector<HeadIndex> out;
  for (std::size_t id : ids) out.push_back({id / heads, id % heads});
  return out;
}

HeadMatrix regularizer_weights(const RegularizerSpec& spec, std::size_t layers, std::size_t heads,
                               std::vector<std::string>* warnings) {
  HeadMatrix c(layers, heads);
  const double scale = spec.gamma / static_cast<double>(layers * heads);
  switch (spec.kind) {
    case RegKind::none:
      break;
    case RegKind::prosocial: {
      double denom = 0.0;
      for (std::size_t i = 0; i < c.values.size(); ++i)
        if (spec.mask.values[i]) denom += spec.importance.values[i];
      if (denom == 0.0) {
        if (warnings) warnings->push_back("eligibility mask selects no head; regularizer is 0");
        break;
      }
      for (std::size_t i = 0; i < c.values.size(); ++i)
        if (spec.mask.values[i]) c.values[i] = scale * (spec.importance.values[i] / denom);
      break;
    }
    case RegKind::uniform:
      std::fill(c.values.begin(), c.values.end(), scale);
      break;
    case RegKind::random_heads:
      for (const auto& h : random_head_subset(layers, heads, spec.random_count, spec.random_seed))
        c.at(h) = scale;
      break;
  }
  return c;
}

double head_sq_distance(const TransformerLM& model, const ParamSnapshot& ref, HeadIndex h) {
  double s = 0.0;
  for (const auto& e : model.head_slice(h).entries) {
    const auto& cur = model.param(e.param).data;
    const auto& r = ref.at(e.param).data;
    for (std::size_t i : e.indices) {
      const double d = cur[i] - r[i];
      s += d * d;
    }
  }
  return s;
}

double regularizer_value(const TransformerLM& model, const RegularizerSpec& spec) {
  const auto& cfg = model.config();
  spec.validate(cfg);
  if (spec.kind == RegKind::none) return 0.0;
  const HeadMatrix c = regularizer_weights(spec, cfg.layers, cfg.heads);
  double total = 0.0;
  for (const auto& h : all_heads(cfg)) {
    if (c.at(h) != 0.0) total += c.at(h) * head_sq_distance(model, *spec.reference, h);
  }
  return total;
}

// ---- fine-tuning ----------------------------------------------------------------------

bool finetune_trainable(const std::string& name) {
  return !is_embedding_param(name) && !is_lm_head_param(name);
}

Tensor predict_proba(const TransformerLM& model, const std::vector<Sequence>& seqs) {
  const std::size_t C = model.config().num_classes;
  Tensor out(Shape{std::max<std::size_t>(seqs.size(), 1), C});
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < seqs.size(); start += kChunk) {
    const std::size_t end = std::min(seqs.size(), start + kChunk);
    std::span<const Sequence> chunk(seqs.data() + start, end - start);
    Tensor logits = forward_cls(model, chunk);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      double mx = logits.at(r, 0);
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits.at(r, c));
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) z += std::exp(logits.at(r, c) - mx);
      for (std::size_t c = 0; c < C; ++c) out.at(start + r, c) = std::exp(logits.at(r, c) - mx) / z;
    }
  }
  return out;
}

namespace {

std::size_t argmax_row(const Tensor& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c)
    if (t.at(r, c) > t.at(r, best)) best = c;
  return best;
}

}  // namespace

double accuracy(const TransformerLM& model, const std::vector<Sequence>& seqs,
                const std::vector<std::size_t>& labels) {
  if (seqs.empty()) return 0.0;
  Tensor p = predict_proba(model, seqs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) hit += argmax_row(p, i) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(seqs.size());
}

RunArtifacts finetune(TransformerLM& model, const Vocabulary& vocab, const Dataset& data,
                      const TrainConfig& cfg, const RegularizerSpec& reg) {
  cfg.validate();
  check_vocab(model, vocab);
  const auto& mcfg = model.config();
  if (!model.weights().has_cls) throw ConfigError("fine-tuning needs a classification head");
  if (mcfg.num_classes != data.num_classes) {
    throw ConfigError("classifier has " + std::to_string(mcfg.num_classes) +
                      " classes but the dataset has " + std::to_string(data.num_classes));
  }
  if (data.examples.empty()) throw ContractError("fine-tuning needs a non-empty dataset");
  reg.validate(mcfg);
  model.freeze_embeddings();

  RunArtifacts art;
  const HeadMatrix coef = regularizer_weights(reg, mcfg.layers, mcfg.heads, &art.warnings);

  std::vector<std::string> texts;
  std::vector<std::size_t> labels;
  for (const auto& e : data.examples) {
    texts.push_back(e.text);
    labels.push_back(e.label);
  }
  const auto seqs = encode_all(vocab, texts, mcfg.max_len);

  RngStream root(cfg.seed);
  std::vector<std::size_t> train_idx, val_idx;
  {
    auto order = permutation(seqs.size(), root.fork(11));
    std::size_t n_val = 0;
    if (cfg.patience > 0 && cfg.holdout_fraction > 0.0 && seqs.size() >= 2) {
      n_val = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(cfg.holdout_fraction * seqs.size() + 0.5)));
      n_val = std::min(n_val, seqs.size() - 1);
    }
    val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  }
  std::vector<Sequence> val_seqs;
  std::vector<std::size_t> val_labels;
  for (std::size_t i : val_idx) {
    val_seqs.push_back(seqs[i]);
    val_labels.push_back(labels[i]);
  }

  // Per-element regularizer weights for every attention tensor.
  std::map<std::string, std::vector<double>> elem_weights;
  if (reg.kind != RegKind::none) {
    model.weights().visit([&](const std::string& name, const Tensor& t) {
      if (!is_attention_param(name)) return;
      const Tensor& ref = reg.reference->at(name);
      if (ref.shape != t.shape) {
        throw DimensionError("reference " + name + " has shape " + shape_str(ref.shape) +
                             ", model has " + shape_str(t.shape));
      }
      elem_weights[name].assign(t.size(), 0.0);
    });
    for (const auto& h : all_heads(mcfg)) {
      for (const auto& e : model.head_slice(h).entries) {
        auto& wv = elem_weights.at(e.param);
        for (std::size_t i : e.indices) wv[i] = coef.at(h);
      }
    }
  }

  TrainableSet set = collect_trainable(model, finetune_trainable);
  AdamW opt(cfg.adam);
  std::vector<std::vector<double>> zero(set.tensors.size());
  const bool early_stop = !val_seqs.empty();
  double best_acc = -1.0;
  Weights<Tensor> best = model.weights();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = permutation(train_idx.size(), root.fork(1000 + epoch));
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Sequence> batch_seqs;
      std::vector<std::size_t> batch_labels;
      for (std::size_t i = start; i < end; ++i) {
        batch_seqs.push_back(seqs[train_idx[order[i]]]);
        batch_labels.push_back(labels[train_idx[order[i]]]);
      }
      ad::Tape tape;
      std::vector<ad::Var> tracked;
      auto w = bind_trainable(tape, model, set, tracked);
      PaddedBatch batch = make_batch(batch_seqs, mcfg.max_len);
      ad::Var hidden = encode(tape, w, mcfg, batch);
      ad::Var loss = ad::cross_entropy(cls_logits(w, hidden, batch), batch_labels);
      if (reg.kind != RegKind::none) {
        w.visit([&](const std::string& name, ad::Var& v) {
          if (!is_attention_param(name)) return;
          ad::Var term = ad::weighted_sq_dist(v, reg.reference->at(name).data,
                                              elem_weights.at(name));
          loss = ad::add(loss, term);
        });
      }
      tape.backward(loss);
      apply_step(opt, tape, set, tracked, zero);
      art.step_losses.push_back(loss.value().data[0]);
      total += loss.value().data[0];
      ++steps;
    }
    art.epoch_losses.push_back(steps ? total / static_cast<double>(steps) : 0.0);
    art.epoch_regularizer.push_back(reg.kind == RegKind::none ? 0.0
                                                              : regularizer_value(model, reg));
    ++art.epochs_run;
    if (!early_stop) continue;
    const double acc = accuracy(model, val_seqs, val_labels);
    art.epoch_val_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = model.weights();
      art.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (early_stop && art.best_epoch > 0) {
    model.weights() = best;
  } else {
    art.best_epoch = art.epochs_run;
  }
  return art;
}

}  // namespace pstn
