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

#include "pstn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "pstn/training.hpp"

namespace pstn {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- intrinsic ------------------------------------------------------------------

std::vector<ProbeProbs> probe_probabilities(const TransformerLM& model, const Vocabulary& vocab,
                                            const std::vector<ProbeEntry>& probes) {
  if (probes.empty()) throw ContractError("probe set is empty");
  if (model.config().vocab_size != vocab.size()) {
    throw ConfigError("model vocabulary does not match the probe vocabulary");
  }
  std::vector<Sequence> seqs;
  std::vector<std::size_t> mask_pos;
  struct Ids {
    TokenId s, a, m;
  };
  std::vector<Ids> ids;
  for (const auto& p : probes) {
    seqs.push_back(vocab.encode(p.context));
    std::size_t pos = seqs.back().size(), n = 0;
    for (std::size_t i = 0; i < seqs.back().size(); ++i)
      if (seqs.back()[i] == vocab.mask_id()) pos = i, ++n;
    if (n != 1) throw ContractError("probe '" + p.context + "' must contain exactly one mask");
    mask_pos.push_back(pos);
    ids.push_back({vocab.id(p.stereo), vocab.id(p.anti), vocab.id(p.meaningless)});
  }
  std::vector<ProbeProbs> out(probes.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < seqs.size(); start += kChunk) {
    const std::size_t end = std::min(seqs.size(), start + kChunk);
    std::span<const Sequence> chunk(seqs.data() + start, end - start);
    ad::Tape tape;
    auto w = bind_weights(tape, model, [](const std::string&) { return false; });
    PaddedBatch batch = make_batch(chunk, model.config().max_len);
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back((i - start) * batch.seq_len + mask_pos[i]);
    ad::Var hidden = encode(tape, w, model.config(), batch);
    const Tensor logits = lm_logits(w, hidden, rows).value();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double mx = logits.at(r, 0);
      for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(r, c));
      double z = 0.0;
      for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits.at(r, c) - mx);
      const Ids& id = ids[start + r];
      out[start + r] = {std::exp(logits.at(r, id.s) - mx) / z, std::exp(logits.at(r, id.a) - mx) / z,
                        std::exp(logits.at(r, id.m) - mx) / z};
    }
  }
  return out;
}

namespace {

double credit(double a, double b) { return a > b ? 1.0 : (a == b ? 0.5 : 0.0); }

}  // namespace

double stereoset_score(const std::vector<ProbeProbs>& probs) {
  if (probs.empty()) throw ContractError("probe set is empty");
  double s = 0.0;
  for (const auto& p : probs) s += credit(p.stereo, p.anti);
  return 100.0 * s / static_cast<double>(probs.size());
}

double lm_score(const std::vector<ProbeProbs>& probs) {
  if (probs.empty()) throw ContractError("probe set is empty");
  double s = 0.0;
  for (const auto& p : probs) s += credit(std::max(p.stereo, p.anti), p.meaningless);
  return 100.0 * s / static_cast<double>(probs.size());
}

double stereoset_score(const TransformerLM& model, const Vocabulary& vocab,
                       const std::vector<ProbeEntry>& probes) {
  return stereoset_score(probe_probabilities(model, vocab, probes));
}

double lm_score(const TransformerLM& model, const Vocabulary& vocab,
                const std::vector<ProbeEntry>& probes) {
  return lm_score(probe_probabilities(model, vocab, probes));
}

// ---- extrinsic ------------------------------------------------------------------

ParallelPredictions predict_parallel(const TransformerLM& model, const Vocabulary& vocab,
                                     const std::vector<ParallelPair>& pairs) {
  std::vector<std::string> male, female;
  ParallelPredictions out;
  out.num_classes = model.config().num_classes;
  for (const auto& p : pairs) {
    male.push_back(p.male.text);
    female.push_back(p.female.text);
    out.labels.push_back(p.male.label);
  }
  const std::size_t L = model.config().max_len;
  const Tensor pm = predict_proba(model, encode_all(vocab, male, L));
  const Tensor pf = predict_proba(model, encode_all(vocab, female, L));
  auto argmax = [](const Tensor& t, std::size_t r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < t.cols(); ++c)
      if (t.at(r, c) > t.at(r, best)) best = c;
    return best;
  };
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.male_pred.push_back(argmax(pm, i));
    out.female_pred.push_back(argmax(pf, i));
    const bool has_neutral = out.num_classes > kNeutral;
    out.male_p_neutral.push_back(has_neutral ? pm.at(i, kNeutral) : 0.0);
    out.female_p_neutral.push_back(has_neutral ? pf.at(i, kNeutral) : 0.0);
  }
  return out;
}

double tpr_gap(const std::vector<std::size_t>& male_labels,
               const std::vector<std::size_t>& male_pred,
               const std::vector<std::size_t>& female_labels,
               const std::vector<std::size_t>& female_pred, std::size_t num_classes) {
  if (male_labels.size() != male_pred.size() || female_labels.size() != female_pred.size()) {
    throw DimensionError("tpr_gap: labels and predictions differ in length");
  }
  auto tpr = [&](const std::vector<std::size_t>& y, const std::vector<std::size_t>& p,
                 std::size_t c, bool& supported) {
    std::size_t pos = 0, hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] != c) continue;
      ++pos;
      hit += p[i] == c;
    }
    supported = pos > 0;
    return pos ? static_cast<double>(hit) / static_cast<double>(pos) : 0.0;
  };
  std::vector<std::size_t> classes;
  if (num_classes == 2) {
    classes = {1};
  } else {
    for (std::size_t c = 0; c < num_classes; ++c) classes.push_back(c);
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c : classes) {
    bool sm = false, sf = false;
    const double tm = tpr(male_labels, male_pred, c, sm);
    const double tf = tpr(female_labels, female_pred, c, sf);
    if (!sm || !sf) continue;
    sum += std::abs(tm - tf);
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double tpr_gap(const ParallelPredictions& p) {
  return tpr_gap(p.labels, p.male_pred, p.labels, p.female_pred, p.num_classes);
}

double neutral_diff(const std::vector<std::size_t>& male_pred,
                    const std::vector<std::size_t>& female_pred, std::size_t neutral_label) {
  auto share = [&](const std::vector<std::size_t>& p) {
    if (p.empty()) return 0.0;
    return static_cast<double>(std::count(p.begin(), p.end(), neutral_label)) /
           static_cast<double>(p.size());
  };
  return std::abs(share(male_pred) - share(female_pred));
}

double parallel_consistency_bias(const std::vector<std::size_t>& male_pred,
                                 const std::vector<std::size_t>& female_pred) {
  if (male_pred.size() != female_pred.size()) {
    throw DimensionError("parallel sets differ in length");
  }
  if (male_pred.empty()) return 0.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < male_pred.size(); ++i) agree += male_pred[i] == female_pred[i];
  return 1.0 - static_cast<double>(agree) / static_cast<double>(male_pred.size());
}

std::string extrinsic_metric_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::occupation: return "tpr_gap";
    case TaskKind::entailment: return "neutral_diff";
    case TaskKind::similarity: return "parallel_inconsistency";
  }
  return "?";
}

double extrinsic_bias(TaskKind kind, const ParallelPredictions& p) {
  switch (kind) {
    case TaskKind::occupation: return tpr_gap(p);
    case TaskKind::entailment: return neutral_diff(p.male_pred, p.female_pred, kNeutral);
    case TaskKind::similarity: return parallel_consistency_bias(p.male_pred, p.female_pred);
  }
  return 0.0;
}

void write_predictions_csv(const std::string& path, const ParallelPredictions& p) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "example_id,gender_flag,label,prediction,p_neutral\n";
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    f << i << ",male," << p.labels[i] << ',' << p.male_pred[i] << ','
      << format_double(p.male_p_neutral[i]) << '\n';
    f << i << ",female," << p.labels[i] << ',' << p.female_pred[i] << ','
      << format_double(p.female_p_neutral[i]) << '\n';
  }
}

ParallelPredictions read_predictions_csv(const std::string& path, std::size_t num_classes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  ParallelPredictions p;
  p.num_classes = num_classes;
  std::string line;
  std::getline(f, line);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string id, gender, label, pred, pn;
    std::getline(in, id, ',');
    std::getline(in, gender, ',');
    std::getline(in, label, ',');
    std::getline(in, pred, ',');
    std::getline(in, pn, ',');
    if (gender == "male") {
      p.labels.push_back(std::stoul(label));
      p.male_pred.push_back(std::stoul(pred));
      p.male_p_neutral.push_back(std::stod(pn));
    } else {
      p.female_pred.push_back(std::stoul(pred));
      p.female_p_neutral.push_back(std::stod(pn));
    }
  }
  return p;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---- reports ----------------------------------------------------------------------

const char* to_string(ModelCategory c) {
  switch (c) {
    case ModelCategory::pretrained: return "pretrained";
    case ModelCategory::debiased: return "debiased";
    case ModelCategory::fine_tuned: return "fine-tuned";
    case ModelCategory::debiased_fine_tuned: return "debiased+fine-tuned";
  }
  return "?";
}

ModelCategory parse_model_category(std::string_view s) {
  for (auto c : kAllCategories)
    if (s == to_string(c)) return c;
  throw ConfigError("unknown model category '" + std::string(s) + "'");
}

std::vector<SweepCell> aggregate(const std::vector<SweepRow>& rows) {
  using Key = std::tuple<int, double, std::size_t>;
  std::map<Key, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) groups[{static_cast<int>(r.category), r.rho, r.m}].push_back(&r);
  std::vector<SweepCell> out;
  for (const auto& [key, members] : groups) {
    SweepCell c;
    c.category = static_cast<ModelCategory>(std::get<0>(key));
    c.rho = std::get<1>(key);
    c.m = std::get<2>(key);
    c.seeds = members.size();
    // Sum in seed order so the result does not depend on row order.
    std::vector<const SweepRow*> sorted = members;
    std::sort(sorted.begin(), sorted.end(),
              [](const SweepRow* a, const SweepRow* b) { return a->seed < b->seed; });
    const double n = static_cast<double>(sorted.size());
    for (const auto* r : sorted) {
      c.stereoset_mean += r->stereoset;
      c.lm_mean += r->lm;
    }
    c.stereoset_mean /= n;
    c.lm_mean /= n;
    if (sorted.size() > 1) {
      double ss = 0.0, sl = 0.0;
      for (const auto* r : sorted) {
        ss += (r->stereoset - c.stereoset_mean) * (r->stereoset - c.stereoset_mean);
        sl += (r->lm - c.lm_mean) * (r->lm - c.lm_mean);
      }
      c.stereoset_sd = std::sqrt(ss / (n - 1.0));
      c.lm_sd = std::sqrt(sl / (n - 1.0));
    }
    out.push_back(c);
  }
  return out;
}

const SweepCell& find_cell(const std::vector<SweepCell>& cells, ModelCategory c, double rho,
                           std::size_t m) {
  for (const auto& cell : cells)
    if (cell.category == c && cell.rho == rho && cell.m == m) return cell;
  throw std::out_of_range(std::string("no sweep cell for ") + to_string(c) + " rho=" +
                          format_double(rho) + " m=" + std::to_string(m));
}

void write_figure1_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "model_category,rho,m,seed,stereoset,lm_score\n";
  for (const auto& r : rows) {
    f << to_string(r.category) << ',' << format_double(r.rho) << ',' << r.m << ',' << r.seed << ','
      << format_double(r.stereoset) << ',' << format_double(r.lm) << '\n';
  }
}

std::vector<SweepRow> read_figure1_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(f, line);
  if (line != "model_category,rho,m,seed,stereoset,lm_score") {
    throw std::runtime_error(path + ": unexpected header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string cat, rho, m, seed, st, lm;
    std::getline(in, cat, ',');
    std::getline(in, rho, ',');
    std::getline(in, m, ',');
    std::getline(in, seed, ',');
    std::getline(in, st, ',');
    std::getline(in, lm, ',');
    rows.push_back({parse_model_category(cat), std::stod(rho), std::stoul(m), std::stoull(seed),
                    std::stod(st), std::stod(lm)});
  }
  return rows;
}

void write_table3_csv(const std::string& path, const std::vector<Table3Row>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "method,task,debiased_score,finetuned_score,delta\n";
  for (const auto& r : rows) {
    f << r.method << ',' << r.task << ',' << format_double(r.debiased_score) << ','
      << format_double(r.finetuned_score) << ',' << format_double(r.delta()) << '\n';
  }
}

void write_sweep_summary_csv(const std::string& path, const std::vector<SweepCell>& cells) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "model_category,rho,m,seeds,stereoset_mean,stereoset_sd,lm_mean,lm_sd\n";
  for (const auto& c : cells) {
    f << to_string(c.category) << ',' << format_double(c.rho) << ',' << c.m << ',' << c.seeds << ','
      << format_double(c.stereoset_mean) << ',' << format_double(c.stereoset_sd) << ','
      << format_double(c.lm_mean) << ',' << format_double(c.lm_sd) << '\n';
  }
}

}  // namespace pstn
