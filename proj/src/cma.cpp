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

#include "pstn/cma.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pstn {

const char* to_string(EffectMode m) { return m == EffectMode::indirect ? "indirect" : "total"; }

EffectMode parse_effect_mode(std::string_view s) {
  if (s == "indirect") return EffectMode::indirect;
  if (s == "total") return EffectMode::total;
  throw ConfigError("unknown CMA mode '" + std::string(s) + "' (expected indirect|total)");
}

const char* to_string(MaskMode m) { return m == MaskMode::magnitude ? "magnitude" : "raw"; }

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "magnitude") return MaskMode::magnitude;
  if (s == "raw") return MaskMode::raw;
  throw ConfigError("unknown mask mode '" + std::string(s) + "' (expected magnitude|raw)");
}

std::size_t single_mask_position(const Sequence& ids, TokenId mask_id) {
  std::size_t pos = ids.size(), n = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == mask_id) {
      pos = i;
      ++n;
    }
  }
  if (n != 1) throw ContractError("prompt must contain exactly one mask, found " + std::to_string(n));
  return pos;
}

PreparedIntervention prepare_intervention(const InterventionEntry& e, const Vocabulary& vocab) {
  PreparedIntervention p;
  p.base = vocab.encode(e.base);
  p.intervened = vocab.encode(e.intervened);
  p.mask_pos = single_mask_position(p.base, vocab.mask_id());
  if (single_mask_position(p.intervened, vocab.mask_id()) != p.mask_pos ||
      p.base.size() != p.intervened.size()) {
    throw ContractError("intervened prompt must align with the base prompt");
  }
  p.anti = vocab.id(e.anti);
  p.stereo = vocab.id(e.stereo);
  return p;
}

double odds_from_logits(const Tensor& logits, std::size_t row, TokenId anti, TokenId stereo) {
  if (anti >= logits.cols() || stereo >= logits.cols()) {
    throw IndexError("candidate token outside vocabulary");
  }
  // The softmax normalizer cancels in the ratio.
  return std::exp(logits.at(row, anti) - logits.at(row, stereo));
}

double candidate_odds(const TransformerLM& model, const Sequence& prompt, std::size_t mask_pos,
                      TokenId anti, TokenId stereo) {
  const std::size_t pos[] = {mask_pos};
  return odds_from_logits(forward_mlm(model, prompt, pos), 0, anti, stereo);
}

double head_effect_from_source(const TransformerLM& model, const PreparedIntervention& entry,
                               HeadIndex h, const Tensor& source) {
  const std::size_t pos[] = {entry.mask_pos};
  const double base = odds_from_logits(forward_mlm(model, entry.base, pos), 0, entry.anti,
                                       entry.stereo);
  std::map<HeadIndex, Tensor> patch{{h, source}};
  const double patched = odds_from_logits(forward_patched(model, entry.base, pos, patch), 0,
                                          entry.anti, entry.stereo);
  return patched / base - 1.0;
}

double head_effect(const TransformerLM& model, const PreparedIntervention& entry, HeadIndex h,
                   EffectMode mode) {
  const std::size_t pos[] = {entry.mask_pos};
  if (mode == EffectMode::total) {
    const double base = candidate_odds(model, entry.base, entry.mask_pos, entry.anti, entry.stereo);
    const double inter =
        candidate_odds(model, entry.intervened, entry.mask_pos, entry.anti, entry.stereo);
    return inter / base - 1.0;
  }
  MlmCapture cap = capture_heads(model, entry.intervened, pos);
  return head_effect_from_source(model, entry, h, cap.heads.at(h));
}

HeadEffectMatrix run_cma(const TransformerLM& model,
                         const std::vector<PreparedIntervention>& entries, EffectMode mode,
                         const std::string& provenance) {
  if (entries.empty()) throw ContractError("run_cma needs at least one intervention entry");
  const auto& cfg = model.config();
  const auto heads = all_heads(cfg);
  HeadEffectMatrix out;
  out.effects = HeadMatrix(cfg.layers, cfg.heads);
  out.provenance = provenance;
  for (const auto& e : entries) {
    const std::size_t pos[] = {e.mask_pos};
    const double base = odds_from_logits(forward_mlm(model, e.base, pos), 0, e.anti, e.stereo);
    if (mode == EffectMode::total) {
      const double inter =
          odds_from_logits(forward_mlm(model, e.intervened, pos), 0, e.anti, e.stereo);
      for (auto& v : out.effects.values) v += inter / base - 1.0;
      continue;
    }
    MlmCapture cap = capture_heads(model, e.intervened, pos);
    for (const auto& h : heads) {
      std::map<HeadIndex, Tensor> patch{{h, cap.heads.at(h)}};
      const double patched =
          odds_from_logits(forward_patched(model, e.base, pos, patch), 0, e.anti, e.stereo);
      out.effects.at(h) += patched / base - 1.0;
    }
  }
  for (auto& v : out.effects.values) v /= static_cast<double>(entries.size());
  return out;
}

std::size_t HeadMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), true));
}

HeadMask debiased_mask(const HeadMatrix& b0, const HeadMatrix& ba, MaskMode mode) {
  if (b0.layers != ba.layers || b0.heads != ba.heads) {
    throw DimensionError("effect matrices differ in shape: " + std::to_string(b0.layers) + "x" +
                         std::to_string(b0.heads) + " vs " + std::to_string(ba.layers) + "x" +
                         std::to_string(ba.heads));
  }
  HeadMask m{b0.layers, b0.heads, std::vector<bool>(b0.values.size())};
  for (std::size_t i = 0; i < b0.values.size(); ++i) {
    m.values[i] = mode == MaskMode::magnitude ? std::abs(ba.values[i]) < std::abs(b0.values[i])
                                              : ba.values[i] < b0.values[i];
  }
  return m;
}

// ---- CSV ----------------------------------------------------------------------

void write_head_matrix_csv(const std::string& path, const HeadMatrix& m,
                           const std::string& value_name, const std::string& provenance) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "# " << provenance << '\n' << "layer,head," << value_name << '\n';
  f.precision(17);
  for (std::size_t l = 0; l < m.layers; ++l)
    for (std::size_t k = 0; k < m.heads; ++k) f << l << ',' << k << ',' << m.at(l, k) << '\n';
}

HeadMatrix read_head_matrix_csv(const std::string& path, std::string* provenance) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(f, line);
  if (line.rfind("# ", 0) != 0) throw std::runtime_error(path + ": missing provenance line");
  if (provenance) *provenance = line.substr(2);
  std::getline(f, line);
  struct Row {
    std::size_t l, k;
    double v;
  };
  std::vector<Row> rows;
  std::size_t L = 0, K = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    Row r{};
    char c1 = 0, c2 = 0;
    if (!(in >> r.l >> c1 >> r.k >> c2 >> r.v) || c1 != ',' || c2 != ',') {
      throw std::runtime_error(path + ": malformed row '" + line + "'");
    }
    L = std::max(L, r.l + 1);
    K = std::max(K, r.k + 1);
    rows.push_back(r);
  }
  HeadMatrix m(L, K);
  for (const auto& r : rows) m.at(r.l, r.k) = r.v;
  return m;
}

}  // namespace pstn
