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

#include <gtest/gtest.h>

#include <cmath>

#include <algorithm>
#include <filesystem>

#include "pstn/metrics.hpp"
#include "pstn/rng.hpp"

using namespace pstn;

namespace {

TransformerLM zero_head_model(const Vocabulary& vocab, std::size_t classes) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.ff_width = 16;
  cfg.vocab_size = vocab.size();
  cfg.max_len = 16;
  cfg.init_std = 0.2;
  cfg.init_seed = 1;
  cfg.num_classes = classes;
  TransformerLM m(cfg);
  std::fill(m.param("lm.w").data.begin(), m.param("lm.w").data.end(), 0.0);
  std::fill(m.param("lm.b").data.begin(), m.param("lm.b").data.end(), 0.0);
  return m;
}

}  // namespace

TEST(Metrics, StereosetCountsPreferences) {
  std::vector<ProbeProbs> p(100, ProbeProbs{0.2, 0.3, 0.1});
  for (int i = 0; i < 53; ++i) p[i] = ProbeProbs{0.4, 0.3, 0.1};
  EXPECT_DOUBLE_EQ(stereoset_score(p), 53.0);
  EXPECT_DOUBLE_EQ(lm_score(p), 100.0);
  std::vector<ProbeProbs> ties(10, ProbeProbs{0.2, 0.2, 0.2});
  EXPECT_DOUBLE_EQ(stereoset_score(ties), 50.0);
  EXPECT_DOUBLE_EQ(lm_score(ties), 50.0);
  RngStream r(3);
  r.shuffle(p);
  EXPECT_DOUBLE_EQ(stereoset_score(p), 53.0);
  EXPECT_THROW(stereoset_score(std::vector<ProbeProbs>{}), ContractError);
}

TEST(Metrics, ZeroLogitModelScoresFifty) {
  const Lexicon lex = default_lexicon();
  Vocabulary vocab(lex);
  const TransformerLM m = zero_head_model(vocab, 0);
  const auto probes = gen_probes(lex, 40);
  EXPECT_DOUBLE_EQ(stereoset_score(m, vocab, probes), 50.0);
  EXPECT_DOUBLE_EQ(lm_score(m, vocab, probes), 50.0);
}

TEST(Metrics, ProbeProbabilitiesMatchLogitDump) {
  const Lexicon lex = default_lexicon();
  Vocabulary vocab(lex);
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.ff_width = 16;
  cfg.vocab_size = vocab.size();
  cfg.init_std = 0.5;
  cfg.init_seed = 12;
  TransformerLM m(cfg);
  const auto probes = gen_probes(lex, 20);
  const auto probs = probe_probabilities(m, vocab, probes);
  double credit = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const Sequence ids = vocab.encode(probes[i].context);
    const std::size_t pos = std::find(ids.begin(), ids.end(), vocab.mask_id()) - ids.begin();
    const std::size_t rows[] = {pos};
    const Tensor logits = forward_mlm(m, ids, rows);
    double z = 0;
    for (double v : logits.data) z += std::exp(v);
    const double ps = std::exp(logits.data[vocab.id(probes[i].stereo)]) / z;
    const double pa = std::exp(logits.data[vocab.id(probes[i].anti)]) / z;
    EXPECT_NEAR(probs[i].stereo, ps, 1e-12);
    EXPECT_NEAR(probs[i].anti, pa, 1e-12);
    credit += ps > pa ? 1.0 : (ps == pa ? 0.5 : 0.0);
  }
  EXPECT_DOUBLE_EQ(stereoset_score(probs), 100.0 * credit / probes.size());
}

TEST(Metrics, TprGap) {
  // Binary: 10 positives per gender, 9 vs 7 recovered.
  std::vector<std::size_t> labels(10, 1), male(10, 1), female(10, 1);
  male[0] = 0;
  female[0] = female[1] = female[2] = 0;
  EXPECT_NEAR(tpr_gap(labels, male, labels, female, 2), 0.2, 1e-15);
  EXPECT_EQ(tpr_gap(labels, male, labels, male, 2), 0.0);
}

TEST(Metrics, TprGapMatchesConfusionCounts) {
  RngStream r(4);
  ParallelPredictions p;
  p.num_classes = 3;
  for (int i = 0; i < 300; ++i) {
    p.labels.push_back(r.uniform_index(3));
    p.male_pred.push_back(r.uniform_index(3));
    p.female_pred.push_back(r.bernoulli(0.7) ? p.labels.back() : r.uniform_index(3));
  }
  std::size_t hit_m[3] = {}, hit_f[3] = {}, n[3] = {};
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    ++n[p.labels[i]];
    hit_m[p.labels[i]] += p.male_pred[i] == p.labels[i];
    hit_f[p.labels[i]] += p.female_pred[i] == p.labels[i];
  }
  double gap = 0;
  for (int c = 0; c < 3; ++c) gap += std::abs(double(hit_m[c]) / n[c] - double(hit_f[c]) / n[c]);
  EXPECT_NEAR(tpr_gap(p), gap / 3, 1e-12);
}

TEST(Metrics, ConsistencyAndNeutralDiff) {
  const std::vector<std::size_t> a{0, 1, 2, 1}, b{0, 1, 0, 0};
  EXPECT_EQ(parallel_consistency_bias(a, a), 0.0);
  EXPECT_DOUBLE_EQ(parallel_consistency_bias(a, b), 0.5);
  EXPECT_DOUBLE_EQ(neutral_diff(a, b, 1), 0.25);
  EXPECT_EQ(neutral_diff(a, a, 1), 0.0);
}

TEST(Metrics, Pearson) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
  EXPECT_NEAR(*pearson(x, x), 1.0, 1e-15);
  std::vector<double> neg(x.size());
  std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
  EXPECT_NEAR(*pearson(x, neg), -1.0, 1e-15);
  // Means 3 and 3; cov sum 8; both squared sums 10.
  EXPECT_NEAR(*pearson(x, y), 0.8, 1e-15);
  EXPECT_FALSE(pearson(x, {1, 1, 1, 1, 1}).has_value());
  EXPECT_FALSE(pearson({1}, {2}).has_value());
}

TEST(Metrics, AggregateMeansAndSampleSd) {
  std::vector<SweepRow> rows;
  for (double rho : {0.0, 1.0})
    for (ModelCategory c : kAllCategories) rows.push_back({c, rho, 100, 1, 60.0 + rho, 90.0});
  EXPECT_EQ(rows.size(), 8u);
  auto cells = aggregate(rows);
  EXPECT_EQ(cells.size(), 8u);
  EXPECT_DOUBLE_EQ(find_cell(cells, ModelCategory::debiased, 1.0, 100).stereoset_mean, 61.0);
  rows.push_back({ModelCategory::debiased, 1.0, 100, 2, 65.0, 92.0});
  cells = aggregate(rows);
  const SweepCell& c = find_cell(cells, ModelCategory::debiased, 1.0, 100);
  EXPECT_DOUBLE_EQ(c.stereoset_mean, 63.0);
  EXPECT_NEAR(c.stereoset_sd, std::sqrt(8.0), 1e-12);
  EXPECT_EQ(c.seeds, 2u);
}

TEST(Metrics, CsvRoundTripReaggregates) {
  const auto dir = std::filesystem::temp_directory_path() / "pstn_metrics_test";
  std::filesystem::create_directories(dir);
  RngStream r(6);
  std::vector<SweepRow> rows;
  for (double rho : {0.0, 0.5})
    for (std::size_t m : {100u, 500u})
      for (std::uint64_t s : {1u, 42u, 100u})
        for (ModelCategory c : kAllCategories) rows.push_back({c, rho, m, s, 50 + 10 * r.uniform(), 80 + r.uniform()});
  const std::string path = (dir / "fig.csv").string();
  write_figure1_csv(path, rows);
  const auto back = aggregate(read_figure1_csv(path));
  const auto mem = aggregate(rows);
  ASSERT_EQ(back.size(), mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) {
    EXPECT_NEAR(back[i].stereoset_mean, mem[i].stereoset_mean, 1e-9);
    EXPECT_NEAR(back[i].lm_sd, mem[i].lm_sd, 1e-9);
  }
}

TEST(Metrics, PredictionsCsvRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pstn_metrics_test";
  std::filesystem::create_directories(dir);
  ParallelPredictions p;
  p.num_classes = 3;
  p.labels = {0, 2};
  p.male_pred = {0, 1};
  p.female_pred = {2, 2};
  p.male_p_neutral = {0.1, 0.25};
  p.female_p_neutral = {0.5, 0.125};
  const std::string path = (dir / "pred.csv").string();
  write_predictions_csv(path, p);
  const ParallelPredictions q = read_predictions_csv(path, 3);
  EXPECT_EQ(q.labels, p.labels);
  EXPECT_EQ(q.male_pred, p.male_pred);
  EXPECT_EQ(q.female_pred, p.female_pred);
  EXPECT_EQ(q.female_p_neutral, p.female_p_neutral);
}
