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

#include <filesystem>

#include "pstn/synthdata.hpp"

using namespace pstn;

namespace {
const Lexicon& lex() {
  static const Lexicon l = default_lexicon();
  return l;
}
}  // namespace

TEST(Synthdata, VocabularyRoundTripAndUnknownToken) {
  Vocabulary v(lex());
  EXPECT_EQ(v.id("[PAD]"), 0u);
  EXPECT_EQ(v.id("[MASK]"), v.mask_id());
  const Sequence s = v.encode("the nurse said that she is kind");
  EXPECT_EQ(v.decode(s), "the nurse said that she is kind");
  EXPECT_THROW(v.encode("the zorblax"), UnknownTokenError);
}

namespace {

// Share of (stereotyped occupation, single-gender sentence) co-occurrences
// that pair the occupation with its stereotyped gender.
double stereotype_share(const Corpus& corpus, std::size_t* total_out = nullptr) {
  std::size_t stereo = 0, total = 0;
  for (const auto& s : corpus) {
    const bool m = contains_male_word(s, lex().gender), f = contains_female_word(s, lex().gender);
    if (m == f) continue;
    for (const auto& w : split_words(s)) {
      for (const auto& o : lex().gender.occupations) {
        if (o.word != w || o.direction == Stereotype::neutral) continue;
        ++total;
        if ((o.direction == Stereotype::male) == m) ++stereo;
      }
    }
  }
  if (total_out) *total_out = total;
  return total ? static_cast<double>(stereo) / static_cast<double>(total) : 0.0;
}

}  // namespace

TEST(Synthdata, PretrainCorpusIsDeterministicAndBiased) {
  CorpusSpec spec{10000, 0.9, 5};
  const Corpus a = gen_pretrain(spec, lex()), b = gen_pretrain(spec, lex());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 10000u);
  std::size_t total = 0;
  EXPECT_NEAR(stereotype_share(a, &total), 0.9, 0.02);
  EXPECT_GT(total, 2000u);
  EXPECT_NEAR(stereotype_share(gen_pretrain(CorpusSpec{10000, 0.5, 5}, lex())), 0.5, 0.02);
  EXPECT_EQ(stereotype_share(gen_pretrain(CorpusSpec{10000, 1.0, 5}, lex())), 1.0);
}

TEST(Synthdata, CdaBalancesEveryPair) {
  const Corpus out = cda_augment(gen_pretrain(CorpusSpec{3000, 0.9, 8}, lex()), lex().gender);
  std::map<std::string, long> count;
  for (const auto& s : out)
    for (const auto& w : split_words(s)) ++count[w];
  for (const auto& [m, f] : lex().gender.pairs) EXPECT_EQ(count[m], count[f]) << m << "/" << f;
  EXPECT_NEAR(stereotype_share(out), 0.5, 1e-12);
}

TEST(Synthdata, CdaDuplicatesGenderedSentencesWithSwaps) {
  const Corpus c{"the nurse said that she is kind", "the desk is red"};
  const Corpus out = cda_augment(c, lex().gender);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0], c[0]);
  EXPECT_EQ(out[1], "the nurse said that he is kind");
  EXPECT_EQ(out[2], c[1]);
  // Swapping twice is the identity.
  for (const auto& [m, f] : lex().gender.pairs) {
    EXPECT_EQ(lex().gender.swap(lex().gender.swap(m)), m);
    EXPECT_EQ(lex().gender.swap(f), m);
  }
}

TEST(Synthdata, TaskFemaleCountAndDeterminism) {
  for (double rho : {0.0, 0.25, 0.5, 1.0}) {
    TaskSpec spec;
    spec.size = 101;
    spec.female_proportion = rho;
    spec.seed = 9;
    const Dataset d = gen_task(spec, lex());
    std::size_t female = 0;
    for (const auto& e : d.examples) female += e.female;
    EXPECT_EQ(female, spec.female_count());
    for (const auto& e : d.examples) {
      EXPECT_EQ(e.female, contains_female_word(e.text, lex().gender)) << e.text;
      EXPECT_LT(e.label, d.num_classes);
    }
  }
  TaskSpec spec;
  spec.female_proportion = 0.5;
  spec.size = 7;
  EXPECT_EQ(spec.female_count(), 4u);  // 3.5 rounds up
  spec.female_proportion = 0.25;
  spec.size = 10000;
  std::size_t female = 0;
  for (const auto& e : gen_task(spec, lex()).examples) female += e.female;
  EXPECT_EQ(female, 2500u);
  spec.female_proportion = 1.0;
  spec.size = 100;
  female = 0;
  for (const auto& e : gen_task(spec, lex()).examples) female += e.female;
  EXPECT_EQ(female, 100u);
}

TEST(Synthdata, AllTaskKindsGenerateValidExamples) {
  for (TaskKind k : {TaskKind::occupation, TaskKind::entailment, TaskKind::similarity}) {
    TaskSpec spec;
    spec.kind = k;
    spec.size = 200;
    spec.female_proportion = 0.5;
    spec.seed = 2;
    const Dataset d = gen_task(spec, lex());
    EXPECT_EQ(d.num_classes, num_classes(k));
    std::vector<std::size_t> counts(d.num_classes, 0);
    for (const auto& e : d.examples) ++counts[e.label];
    for (std::size_t c : counts) EXPECT_GT(c, 0u) << to_string(k);
    EXPECT_EQ(parse_task_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_task_kind("nope"), ConfigError);
}

TEST(Synthdata, SpecValidation) {
  TaskSpec spec;
  spec.female_proportion = 1.5;
  EXPECT_THROW(spec.validate(), ConfigError);
  CorpusSpec c;
  c.beta = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Synthdata, EvaluationSets) {
  Vocabulary v(lex());
  for (const auto& e : gen_interventions(lex(), 20)) {
    const auto base = split_words(e.base), inter = split_words(e.intervened);
    ASSERT_EQ(base.size(), inter.size());
    std::size_t diff = 0;
    for (std::size_t i = 0; i < base.size(); ++i) diff += base[i] != inter[i];
    EXPECT_EQ(diff, 1u) << e.base;
    EXPECT_NO_THROW(v.encode(e.base));
    EXPECT_NO_THROW(v.encode(e.intervened));
    EXPECT_NE(e.anti, e.stereo);
  }
  for (const auto& p : gen_probes(lex(), 30)) {
    std::size_t masks = 0;
    for (const auto& w : split_words(p.context)) masks += w == kMaskToken;
    EXPECT_EQ(masks, 1u);
    EXPECT_NE(p.stereo, p.anti);
    EXPECT_TRUE(v.contains(p.stereo) && v.contains(p.anti) && v.contains(p.meaningless));
  }
  for (const auto& pair : gen_extrinsic_eval(lex(), TaskKind::occupation, 25, 3)) {
    EXPECT_EQ(pair.male.label, pair.female.label);
    const auto mw = split_words(pair.male.text), fw = split_words(pair.female.text);
    ASSERT_EQ(mw.size(), fw.size());
    for (std::size_t i = 0; i < mw.size(); ++i) {
      if (mw[i] != fw[i]) {
        EXPECT_EQ(lex().gender.swap(mw[i]), fw[i]);
      }
    }
    EXPECT_FALSE(contains_female_word(pair.male.text, lex().gender));
    EXPECT_TRUE(contains_female_word(pair.female.text, lex().gender));
  }
}

TEST(Synthdata, CsvAndCorpusRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pstn_synth_test";
  std::filesystem::create_directories(dir);
  TaskSpec spec;
  spec.size = 50;
  spec.female_proportion = 0.5;
  const Dataset d = gen_task(spec, lex());
  write_dataset_csv((dir / "t.csv").string(), d);
  const Dataset r = read_dataset_csv((dir / "t.csv").string(), TaskKind::occupation);
  ASSERT_EQ(r.examples.size(), d.examples.size());
  for (std::size_t i = 0; i < d.examples.size(); ++i) {
    EXPECT_EQ(r.examples[i].text, d.examples[i].text);
    EXPECT_EQ(r.examples[i].label, d.examples[i].label);
    EXPECT_EQ(r.examples[i].female, d.examples[i].female);
  }
  const Corpus c = gen_pretrain(CorpusSpec{20, 0.9, 1}, lex());
  write_corpus((dir / "c.txt").string(), c);
  EXPECT_EQ(read_corpus((dir / "c.txt").string()), c);
}
