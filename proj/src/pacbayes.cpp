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

#include "pstn/pacbayes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pstn/optim.hpp"
#include "pstn/rng.hpp"
#include "pstn/training.hpp"

namespace pstn {

std::size_t NoiseState::offset_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return offsets[i];
  throw std::out_of_range("noise state has no tensor '" + name + "'");
}

NoiseState init_noise(const TransformerLM& model, double lambda) {
  NoiseState n;
  n.lambda = lambda;
  model.weights().visit([&](const std::string& name, const Tensor& t) {
    if (!finetune_trainable(name)) return;
    n.names.push_back(name);
    n.offsets.push_back(n.q.size());
    n.classifier.push_back(is_classifier_param(name));
    for (double v : t.data) n.q.push_back(std::log(std::max(0.001 * std::abs(v), kNoiseVarianceFloor)));
  });
  n.p = n.q;
  return n;
}

double kl_term(const NoiseState& noise) {
  if (noise.q.size() != noise.p.size()) throw DimensionError("noise q and p differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < noise.q.size(); ++i) {
    s += 0.5 * (noise.p[i] - noise.q[i]) + 0.5 * std::exp(noise.q[i] - noise.p[i]) - 0.5;
  }
  return s;
}

void NoiseConfig::validate() const {
  if (batch_size < 1) throw ConfigError("noise batch size must be >= 1");
  if (samples < 1) throw ConfigError("noise samples per step must be >= 1");
  if (!(lr_pretrained >= 0.0) || !(lr_classifier >= 0.0) || !(eps > 0.0)) {
    throw ConfigError("noise optimizer hyperparameters out of range");
  }
}

namespace {

std::span<const double> slice(const std::vector<double>& v, const NoiseState& n, std::size_t i,
                              std::size_t len) {
  return std::span<const double>(v).subspan(n.offsets[i], len);
}

// Perturbed cross-entropy of one batch; q tensors become tracked leaves when
// `q_vars` is non-null.
ad::Var noisy_batch_loss(ad::Tape& tape, const TransformerLM& model, const NoiseState& noise,
                         const std::vector<Sequence>& seqs, const std::vector<std::size_t>& labels,
                         RngStream& rng, std::vector<ad::Var>* q_vars) {
  std::size_t next = 0;
  auto w = bind_weights_with(tape, model, [&](const std::string& name, const Tensor& t) {
    if (next >= noise.names.size() || noise.names[next] != name) return tape.constant(t);
    Tensor q(t.shape, std::vector<double>(slice(noise.q, noise, next, t.size()).begin(),
                                          slice(noise.q, noise, next, t.size()).end()));
    ad::Var qv = tape.leaf(std::move(q), q_vars != nullptr);
    if (q_vars) q_vars->push_back(qv);
    ++next;
    return ad::gaussian_perturb(tape.constant(t), qv, rng);
  });
  PaddedBatch batch = make_batch(seqs, model.config().max_len);
  ad::Var hidden = encode(tape, w, model.config(), batch);
  return ad::cross_entropy(cls_logits(w, hidden, batch), labels);
}

}  // namespace

EstimateResult estimate(const TransformerLM& model, const Vocabulary& vocab, const Dataset& data,
                        NoiseState init, const NoiseConfig& cfg) {
  cfg.validate();
  if (!model.weights().has_cls) throw ConfigError("noise estimation needs a classification head");
  if (data.examples.empty()) throw ContractError("noise estimation needs a non-empty dataset");
  if (init.q.size() != init.p.size()) throw DimensionError("noise q and p differ in length");
  {
    const NoiseState layout = init_noise(model);
    if (layout.names != init.names || layout.q.size() != init.q.size()) {
      throw DimensionError("noise state does not match the model's fine-tunable parameters");
    }
  }
  EstimateResult res;
  std::vector<std::string> texts;
  std::vector<std::size_t> labels;
  for (const auto& e : data.examples) {
    texts.push_back(e.text);
    labels.push_back(e.label);
  }
  const auto seqs = encode_all(vocab, texts, model.config().max_len);
  res.train_accuracy = accuracy(model, seqs, labels);
  if (res.train_accuracy < cfg.min_train_accuracy) {
    res.warnings.push_back("model may not be converged: training accuracy " +
                           std::to_string(res.train_accuracy) + " below " +
                           std::to_string(cfg.min_train_accuracy));
  }

  NoiseState noise = std::move(init);
  AdamW opt(AdamWConfig{1.0, cfg.beta1, cfg.beta2, cfg.eps, 0.0});
  RngStream root(cfg.seed);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    root.fork(1000 + epoch).shuffle(order);
    double total = 0.0, total_ce = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Sequence> bs;
      std::vector<std::size_t> bl;
      for (std::size_t i = start; i < end; ++i) {
        bs.push_back(seqs[order[i]]);
        bl.push_back(labels[order[i]]);
      }
      std::vector<double> grad(noise.q.size(), 0.0);
      double ce_mean = 0.0;
      for (std::size_t s = 0; s < cfg.samples; ++s) {
        ad::Tape tape;
        std::vector<ad::Var> qv;
        RngStream rng = root.fork(mix64(step * 131 + s + 1));
        ad::Var ce = noisy_batch_loss(tape, model, noise, bs, bl, rng, &qv);
        ad::Var loss = ad::scale(ce, 1.0 / static_cast<double>(cfg.samples));
        tape.backward(loss);
        ce_mean += ce.value().data[0] / static_cast<double>(cfg.samples);
        for (std::size_t i = 0; i < qv.size(); ++i) {
          const auto& g = tape.grad(qv[i]);
          for (std::size_t j = 0; j < g.size(); ++j) grad[noise.offsets[i] + j] += g[j];
        }
      }
      // d/dq of lambda * KL.
      for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] += noise.lambda * 0.5 * (std::exp(noise.q[i] - noise.p[i]) - 1.0);
      }
      std::vector<ParamSlot> slots;
      for (std::size_t i = 0; i < noise.names.size(); ++i) {
        const std::size_t off = noise.offsets[i];
        const std::size_t len =
            (i + 1 < noise.names.size() ? noise.offsets[i + 1] : noise.q.size()) - off;
        slots.push_back({std::span<double>(noise.q).subspan(off, len),
                         std::span<const double>(grad).subspan(off, len),
                         noise.classifier[i] ? cfg.lr_classifier : cfg.lr_pretrained});
      }
      opt.step(slots);
      for (double& q : noise.q) q = std::max(q, ad::kLogVarFloor);
      ++step;
      total_ce += ce_mean;
      total += ce_mean + noise.lambda * kl_term(noise);
      ++steps;
    }
    res.epoch_objective.push_back(steps ? total / static_cast<double>(steps) : 0.0);
    res.final_train_loss = steps ? total_ce / static_cast<double>(steps) : 0.0;
  }
  res.final_kl = kl_term(noise);
  res.noise = std::move(noise);
  return res;
}

LossSample perturbed_loss(const TransformerLM& model, const std::vector<Sequence>& seqs,
                          const std::vector<std::size_t>& labels, const NoiseState& noise,
                          std::size_t draws, std::uint64_t seed) {
  if (draws < 2) throw ContractError("perturbed_loss needs at least two draws");
  RngStream root(seed);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    ad::Tape tape;
    RngStream rng = root.fork(d);
    const double v = noisy_batch_loss(tape, model, noise, seqs, labels, rng, nullptr).value().data[0];
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(draws);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

ImportanceMatrix head_importance(const NoiseState& noise, const TransformerLM& model) {
  const auto& cfg = model.config();
  ImportanceMatrix out;
  out.per_param.resize(noise.q.size());
  for (std::size_t i = 0; i < noise.q.size(); ++i) out.per_param[i] = 1.0 / std::exp(noise.q[i]);
  out.heads = HeadMatrix(cfg.layers, cfg.heads);
  for (const auto& h : all_heads(cfg)) {
    double s = 0.0;
    for (const auto& e : model.head_slice(h).entries) {
      const std::size_t off = noise.offset_of(e.param);
      for (std::size_t idx : e.indices) s += out.per_param[off + idx];
    }
    out.heads.at(h) = s;
  }
  return out;
}

double head_mean_variance(const NoiseState& noise, const TransformerLM& model, HeadIndex h) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& e : model.head_slice(h).entries) {
    const std::size_t off = noise.offset_of(e.param);
    for (std::size_t idx : e.indices) {
      s += std::exp(noise.q[off + idx]);
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

double pac_bayes_bound(double train_loss, double kl, std::size_t m, double delta) {
  if (m == 0) throw ContractError("PAC-Bayes bound needs m >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ContractError("delta must lie in (0, 1)");
  return train_loss + std::sqrt((std::log(1.0 / delta) + kl) / (2.0 * static_cast<double>(m)));
}

}  // namespace pstn
