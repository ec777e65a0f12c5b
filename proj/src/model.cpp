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

#include "pstn/model.hpp"

#include <algorithm>
#include <cstring>

#include "pstn/hash.hpp"
#include "pstn/rng.hpp"

namespace pstn {

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model: layers must be >= 1");
  if (heads < 1) throw ConfigError("model: heads must be >= 1");
  if (width == 0 || width % heads != 0) {
    throw ConfigError("model: width " + std::to_string(width) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (ff_width == 0) throw ConfigError("model: ff_width must be positive");
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
  if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
  if (!head_gates.empty() && head_gates.size() != layers * heads) {
    throw ConfigError("model: head_gates needs layers*heads entries");
  }
}

std::vector<HeadIndex> all_heads(const ModelConfig& cfg) {
  std::vector<HeadIndex> out;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (std::size_t k = 0; k < cfg.heads; ++k) out.push_back({l, k});
  return out;
}

bool is_embedding_param(const std::string& name) {
  return name == "tok_emb" || name == "pos_emb";
}

bool is_attention_param(const std::string& name) {
  return name.find(".attn.") != std::string::npos;
}

bool is_lm_head_param(const std::string& name) { return name.rfind("lm.", 0) == 0; }
bool is_classifier_param(const std::string& name) { return name.rfind("cls.", 0) == 0; }

std::size_t HeadSlice::count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.indices.size();
  return n;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, RngStream& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = stddev * rng.normal();
  return t;
}

}  // namespace

TransformerLM::TransformerLM(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  RngStream rng(cfg_.init_seed);
  const std::size_t d = cfg_.width, f = cfg_.ff_width;
  const double s = cfg_.init_std;
  w_.tok_emb = normal_tensor({cfg_.vocab_size, d}, s, rng);
  w_.pos_emb = normal_tensor({cfg_.max_len, d}, s, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    LayerWeights<Tensor> L;
    L.ln1_gain = Tensor({d}, 1.0);
    L.ln1_bias = Tensor({d}, 0.0);
    L.wq = normal_tensor({d, d}, s, rng);
    L.bq = Tensor({d}, 0.0);
    L.wk = normal_tensor({d, d}, s, rng);
    L.bk = Tensor({d}, 0.0);
    L.wv = normal_tensor({d, d}, s, rng);
    L.bv = Tensor({d}, 0.0);
    L.wo = normal_tensor({d, d}, s, rng);
    L.ln2_gain = Tensor({d}, 1.0);
    L.ln2_bias = Tensor({d}, 0.0);
    L.ff_w1 = normal_tensor({d, f}, s, rng);
    L.ff_b1 = Tensor({f}, 0.0);
    L.ff_w2 = normal_tensor({f, d}, s, rng);
    L.ff_b2 = Tensor({d}, 0.0);
    w_.layers.push_back(std::move(L));
  }
  w_.lnf_gain = Tensor({d}, 1.0);
  w_.lnf_bias = Tensor({d}, 0.0);
  w_.tied_lm = cfg_.tie_lm_head;
  // Untied LM heads start at zero: every masked slot predicts uniformly.
  if (!cfg_.tie_lm_head) w_.lm_w = Tensor({d, cfg_.vocab_size}, 0.0);
  w_.lm_b = Tensor({cfg_.vocab_size}, 0.0);
  if (cfg_.num_classes > 0) attach_classifier(cfg_.num_classes, mix64(cfg_.init_seed ^ 0xc1a55));
}

void TransformerLM::attach_classifier(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  RngStream rng(seed);
  cfg_.num_classes = num_classes;
  w_.has_cls = true;
  w_.cls_w = normal_tensor({cfg_.width, num_classes}, cfg_.init_std, rng);
  w_.cls_b = Tensor({num_classes}, 0.0);
}

void TransformerLM::set_head_gates(std::vector<double> gates) {
  ModelConfig next = cfg_;
  next.head_gates = std::move(gates);
  next.validate();
  cfg_ = std::move(next);
}

std::vector<std::string> TransformerLM::param_names() const {
  std::vector<std::string> names;
  w_.visit([&](const std::string& n, const Tensor&) { names.push_back(n); });
  return names;
}

Tensor& TransformerLM::param(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).param(name));
}

const Tensor& TransformerLM::param(const std::string& name) const {
  const Tensor* found = nullptr;
  w_.visit([&](const std::string& n, const Tensor& t) {
    if (n == name) found = &t;
  });
  if (!found) throw std::out_of_range("unknown parameter '" + name + "'");
  return *found;
}

std::size_t TransformerLM::param_count() const {
  std::size_t n = 0;
  w_.visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t TransformerLM::attention_param_count() const {
  std::size_t n = 0;
  w_.visit([&](const std::string& name, const Tensor& t) {
    if (is_attention_param(name)) n += t.size();
  });
  return n;
}

HeadSlice TransformerLM::head_slice(HeadIndex h) const {
  if (h.layer >= cfg_.layers || h.head >= cfg_.heads) {
    throw IndexError("head (" + std::to_string(h.layer) + "," + std::to_string(h.head) +
                     ") out of range");
  }
  const std::size_t d = cfg_.width, dh = cfg_.head_dim(), c0 = h.head * dh;
  const std::string p = "layers." + std::to_string(h.layer) + ".attn.";
  HeadSlice slice;
  slice.head = h;
  for (const char* m : {"wq", "wk", "wv"}) {
    HeadSlice::Entry w{p + m, {}}, b{p + std::string("b") + m[1], {}};
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = c0; c < c0 + dh; ++c) w.indices.push_back(r * d + c);
    for (std::size_t c = c0; c < c0 + dh; ++c) b.indices.push_back(c);
    slice.entries.push_back(std::move(w));
    slice.entries.push_back(std::move(b));
  }
  HeadSlice::Entry o{p + "wo", {}};
  for (std::size_t r = c0; r < c0 + dh; ++r)
    for (std::size_t c = 0; c < d; ++c) o.indices.push_back(r * d + c);
  slice.entries.push_back(std::move(o));
  return slice;
}

void TransformerLM::freeze_embeddings() {
  frozen_.insert("tok_emb");
  frozen_.insert("pos_emb");
}

std::uint64_t TransformerLM::checksum() const {
  Fnv64 h;
  w_.visit([&](const std::string& name, const Tensor& t) {
    h.update(name);
    h.update(std::span<const double>(t.data));
  });
  return h.digest();
}

// ---- forward ----------------------------------------------------------------

PaddedBatch make_batch(std::span<const Sequence> seqs, std::size_t max_len) {
  if (seqs.empty()) throw DimensionError("make_batch: empty batch");
  PaddedBatch b;
  b.batch = seqs.size();
  for (const auto& s : seqs) {
    if (s.empty()) throw DimensionError("make_batch: empty sequence");
    if (s.size() > max_len) {
      throw DimensionError("sequence length " + std::to_string(s.size()) +
                           " exceeds max length " + std::to_string(max_len));
    }
    b.seq_len = std::max(b.seq_len, s.size());
  }
  b.ids.assign(b.batch * b.seq_len, kPadId);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    std::copy(seqs[i].begin(), seqs[i].end(), b.ids.begin() + i * b.seq_len);
    b.lengths.push_back(seqs[i].size());
  }
  return b;
}

Weights<ad::Var> bind_weights_with(
    ad::Tape& tape, const TransformerLM& model,
    const std::function<ad::Var(const std::string&, const Tensor&)>& make) {
  const auto& src = model.weights();
  Weights<ad::Var> w;
  w.tied_lm = src.tied_lm;
  w.has_cls = src.has_cls;
  w.layers.resize(src.layers.size());
  // Walk both structures in lockstep; visit order is identical for both.
  std::vector<ad::Var*> slots;
  w.visit([&](const std::string&, ad::Var& v) { slots.push_back(&v); });
  std::size_t i = 0;
  src.visit([&](const std::string& name, const Tensor& t) { *slots[i++] = make(name, t); });
  (void)tape;
  return w;
}

Weights<ad::Var> bind_weights(ad::Tape& tape, const TransformerLM& model,
                              const std::function<bool(const std::string&)>& track) {
  return bind_weights_with(tape, model, [&](const std::string& name, const Tensor& t) {
    return tape.leaf(t, track(name));
  });
}

ad::Var encode(ad::Tape& tape, const Weights<ad::Var>& w, const ModelConfig& cfg,
               const PaddedBatch& batch, const ForwardHooks& hooks) {
  const std::size_t T = batch.seq_len, dh = cfg.head_dim();
  if (T > cfg.max_len) {
    throw DimensionError("sequence length " + std::to_string(T) +
                         " exceeds max length " + std::to_string(cfg.max_len));
  }
  std::vector<std::size_t> pos(batch.batch * T);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % T;
  ad::Var x = ad::add(ad::embedding(w.tok_emb, batch.ids), ad::embedding(w.pos_emb, pos));

  ad::AttentionLayout layout{batch.batch, T, cfg.heads, batch.lengths};
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& L = w.layers[l];
    ad::Var h = ad::layer_norm(x, L.ln1_gain, L.ln1_bias);
    ad::Var q = ad::add_row(ad::matmul(h, L.wq), L.bq);
    ad::Var k = ad::add_row(ad::matmul(h, L.wk), L.bk);
    ad::Var v = ad::add_row(ad::matmul(h, L.wv), L.bv);
    ad::Var a = ad::attention(q, k, v, layout);
    if (!cfg.head_gates.empty()) {
      std::vector<double> gates(cfg.head_gates.begin() + l * cfg.heads,
                                cfg.head_gates.begin() + (l + 1) * cfg.heads);
      a = ad::scale_column_blocks(a, gates);
    }
    if (hooks.patches) {
      std::vector<ad::ColumnBlockPatch> patches;
      for (const auto& [idx, value] : *hooks.patches) {
        if (idx.layer != l) continue;
        if (value.rank() != 2 || value.rows() != T || value.cols() != dh) {
          throw PatchError("patch for head (" + std::to_string(idx.layer) + "," +
                           std::to_string(idx.head) + ") has shape " +
                           shape_str(value.shape) + ", expected [" + std::to_string(T) +
                           "x" + std::to_string(dh) + "]");
        }
        patches.push_back({idx.head, 0, value});
      }
      if (!patches.empty()) a = ad::patch_column_blocks(a, dh, patches);
    }
    if (hooks.capture) {
      const Tensor& av = a.value();
      for (std::size_t k2 = 0; k2 < cfg.heads; ++k2) {
        Tensor out(Shape{T, dh});
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t c = 0; c < dh; ++c) out.at(t, c) = av.at(t, k2 * dh + c);
        (*hooks.capture)[{l, k2}] = std::move(out);
      }
    }
    x = ad::add(x, ad::matmul(a, L.wo));
    ad::Var h2 = ad::layer_norm(x, L.ln2_gain, L.ln2_bias);
    ad::Var f = ad::gelu(ad::add_row(ad::matmul(h2, L.ff_w1), L.ff_b1));
    x = ad::add(x, ad::add_row(ad::matmul(f, L.ff_w2), L.ff_b2));
  }
  return ad::layer_norm(x, w.lnf_gain, w.lnf_bias);
}

ad::Var lm_logits(const Weights<ad::Var>& w, ad::Var hidden,
                  std::span<const std::size_t> rows) {
  ad::Var h = ad::select_rows(hidden, rows);
  ad::Var logits = w.tied_lm ? ad::matmul_nt(h, w.tok_emb) : ad::matmul(h, w.lm_w);
  return ad::add_row(logits, w.lm_b);
}

ad::Var cls_logits(const Weights<ad::Var>& w, ad::Var hidden, const PaddedBatch& batch) {
  if (!w.has_cls) throw ConfigError("model has no classification head");
  std::vector<std::size_t> rows(batch.batch);
  for (std::size_t i = 0; i < batch.batch; ++i) rows[i] = i * batch.seq_len;
  return ad::add_row(ad::matmul(ad::select_rows(hidden, rows), w.cls_w), w.cls_b);
}

namespace {

Tensor run_mlm(const TransformerLM& model, const Sequence& ids,
               std::span<const std::size_t> masked_positions, const ForwardHooks& hooks) {
  for (std::size_t p : masked_positions) {
    if (p >= ids.size()) {
      throw IndexError("masked position " + std::to_string(p) +
                       " outside sequence of length " + std::to_string(ids.size()));
    }
  }
  for (TokenId t : ids) {
    if (t >= model.config().vocab_size) {
      throw IndexError("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
  ad::Tape tape;
  auto w = bind_weights(tape, model, [](const std::string&) { return false; });
  std::vector<Sequence> one{ids};
  PaddedBatch batch = make_batch(one, model.config().max_len);
  ad::Var hidden = encode(tape, w, model.config(), batch, hooks);
  return lm_logits(w, hidden, masked_positions).value();
}

}  // namespace

Tensor forward_mlm(const TransformerLM& model, const Sequence& ids,
                   std::span<const std::size_t> masked_positions) {
  return run_mlm(model, ids, masked_positions, {});
}

MlmCapture capture_heads(const TransformerLM& model, const Sequence& ids,
                         std::span<const std::size_t> masked_positions) {
  MlmCapture out;
  ForwardHooks hooks;
  hooks.capture = &out.heads;
  out.logits = run_mlm(model, ids, masked_positions, hooks);
  return out;
}

Tensor forward_patched(const TransformerLM& model, const Sequence& ids,
                       std::span<const std::size_t> masked_positions,
                       const std::map<HeadIndex, Tensor>& patches) {
  for (const auto& [h, v] : patches) {
    if (h.layer >= model.config().layers || h.head >= model.config().heads) {
      throw PatchError("patch names head (" + std::to_string(h.layer) + "," +
                       std::to_string(h.head) + ") which does not exist");
    }
  }
  ForwardHooks hooks;
  hooks.patches = &patches;
  return run_mlm(model, ids, masked_positions, hooks);
}

Tensor forward_cls(const TransformerLM& model, std::span<const Sequence> seqs) {
  if (!model.weights().has_cls) throw ConfigError("model has no classification head");
  ad::Tape tape;
  auto w = bind_weights(tape, model, [](const std::string&) { return false; });
  PaddedBatch batch = make_batch(seqs, model.config().max_len);
  ad::Var hidden = encode(tape, w, model.config(), batch);
  return cls_logits(w, hidden, batch).value();
}

}  // namespace pstn
