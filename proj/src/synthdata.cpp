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

#include "pstn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pstn/rng.hpp"

namespace pstn {

const char* to_string(Stereotype s) {
  switch (s) {
    case Stereotype::male: return "male";
    case Stereotype::female: return "female";
    case Stereotype::neutral: return "neutral";
  }
  return "?";
}

const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::occupation: return "occupation";
    case TaskKind::entailment: return "entailment";
    case TaskKind::similarity: return "similarity";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "occupation") return TaskKind::occupation;
  if (s == "entailment") return TaskKind::entailment;
  if (s == "similarity") return TaskKind::similarity;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

std::size_t num_classes(TaskKind k) {
  switch (k) {
    case TaskKind::occupation: return 20;
    case TaskKind::entailment: return 3;
    case TaskKind::similarity: return 2;
  }
  return 0;
}

// ---- lexicon ------------------------------------------------------------------

void GenderLexicon::validate() const {
  if (pairs.empty()) throw ConfigError("gender lexicon has no word pairs");
  if (occupations.empty()) throw ConfigError("gender lexicon has no occupations");
  std::set<std::string> seen;
  for (const auto& [m, f] : pairs) {
    if (m == f || !seen.insert(m).second || !seen.insert(f).second) {
      throw ConfigError("gender pairs overlap at '" + m + "'/'" + f + "'");
    }
  }
  for (const auto& o : occupations) {
    if (!seen.insert(o.word).second) {
      throw ConfigError("occupation '" + o.word + "' is also listed elsewhere");
    }
  }
}

std::string GenderLexicon::swap(std::string_view w) const {
  for (const auto& [m, f] : pairs) {
    if (w == m) return f;
    if (w == f) return m;
  }
  return {};
}

bool GenderLexicon::is_male(std::string_view w) const {
  return std::any_of(pairs.begin(), pairs.end(), [&](const auto& p) { return p.first == w; });
}

bool GenderLexicon::is_female(std::string_view w) const {
  return std::any_of(pairs.begin(), pairs.end(), [&](const auto& p) { return p.second == w; });
}

std::vector<std::string> Lexicon::all_adjectives() const {
  std::vector<std::string> out;
  for (const auto& [a, b] : adjectives) {
    out.push_back(a);
    out.push_back(b);
  }
  return out;
}

const Occupation& Lexicon::occupation(std::string_view word) const {
  for (const auto& o : gender.occupations)
    if (o.word == word) return o;
  throw UnknownTokenError("'" + std::string(word) + "' is not an occupation");
}

Lexicon default_lexicon() {
  Lexicon lex;
  lex.gender.pairs = {{"he", "she"},       {"him", "her"},       {"his", "hers"},
                      {"man", "woman"},    {"boy", "girl"},      {"father", "mother"},
                      {"son", "daughter"}, {"brother", "sister"}, {"husband", "wife"},
                      {"king", "queen"},   {"uncle", "aunt"},    {"mr", "mrs"}};
  using S = Stereotype;
  lex.gender.occupations = {
      {"engineer", S::male, {"bridge", "circuit"}},
      {"carpenter", S::male, {"timber", "hammer"}},
      {"mechanic", S::male, {"engine", "wrench"}},
      {"pilot", S::male, {"cockpit", "runway"}},
      {"plumber", S::male, {"pipe", "valve"}},
      {"surgeon", S::male, {"scalpel", "ward"}},
      {"firefighter", S::male, {"hose", "ladder"}},
      {"programmer", S::male, {"code", "laptop"}},
      {"nurse", S::female, {"bandage", "patient"}},
      {"secretary", S::female, {"memo", "calendar"}},
      {"librarian", S::female, {"shelf", "catalog"}},
      {"receptionist", S::female, {"lobby", "phone"}},
      {"hairdresser", S::female, {"scissors", "salon"}},
      {"dancer", S::female, {"stage", "ballet"}},
      {"nanny", S::female, {"toddler", "stroller"}},
      {"housekeeper", S::female, {"broom", "laundry"}},
      {"teacher", S::neutral, {"lesson", "classroom"}},
      {"writer", S::neutral, {"novel", "draft"}},
      {"lawyer", S::neutral, {"court", "contract"}},
      {"chef", S::neutral, {"kitchen", "recipe"}},
  };
  lex.verbs = {"said", "thinks", "knows", "hopes"};
  lex.adjectives = {{"kind", "rude"},    {"happy", "sad"},   {"busy", "idle"},
                    {"calm", "angry"},   {"strong", "weak"}, {"young", "old"},
                    {"early", "late"},   {"smart", "dull"},  {"tired", "rested"},
                    {"honest", "sly"}};
  lex.meaningless = {"banana", "cloud", "pebble", "spoon", "carpet", "tulip", "marble", "kettle"};
  lex.function_words = {"the", "is", "works", "with", "and", "that", "likes"};
  return lex;
}

// ---- vocabulary -----------------------------------------------------------------

Vocabulary::Vocabulary(const Lexicon& lex) {
  lex.gender.validate();
  auto add = [&](const std::string& w) {
    if (index_.count(w)) return;
    index_.emplace(w, words_.size());
    words_.push_back(w);
  };
  for (const char* s : {kPadToken, kMaskToken, kClsToken, kSepToken}) add(s);
  for (const auto& [m, f] : lex.gender.pairs) {
    add(m);
    add(f);
  }
  for (const auto& o : lex.gender.occupations) add(o.word);
  for (const auto& o : lex.gender.occupations)
    for (const auto& c : o.context) add(c);
  for (const auto& w : lex.verbs) add(w);
  for (const auto& w : lex.all_adjectives()) add(w);
  for (const auto& w : lex.function_words) add(w);
  for (const auto& w : lex.meaningless) add(w);
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw UnknownTokenError("unknown token '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

bool Vocabulary::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Sequence Vocabulary::encode(std::string_view text) const {
  Sequence out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(const Sequence& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

// ---- helpers --------------------------------------------------------------------

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

template <class T>
const T& pick(const std::vector<T>& v, RngStream& rng) {
  return v[rng.uniform_index(v.size())];
}

std::vector<const Occupation*> by_direction(const Lexicon& lex, Stereotype s) {
  std::vector<const Occupation*> out;
  for (const auto& o : lex.gender.occupations)
    if (o.direction == s) out.push_back(&o);
  return out;
}

// Gendered word of pair `pair_index` for the requested gender.
const std::string& gendered(const Lexicon& lex, std::size_t pair_index, bool female) {
  const auto& p = lex.gender.pairs.at(pair_index);
  return female ? p.second : p.first;
}

std::size_t pair_index(const Lexicon& lex, std::string_view male_word) {
  for (std::size_t i = 0; i < lex.gender.pairs.size(); ++i)
    if (lex.gender.pairs[i].first == male_word) return i;
  throw ConfigError("lexicon lacks the gender pair for '" + std::string(male_word) + "'");
}

// Pairs usable as "the <noun>" subjects.
std::vector<std::size_t> noun_pairs(const Lexicon& lex) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < lex.gender.pairs.size(); ++i) {
    const auto& m = lex.gender.pairs[i].first;
    if (m != "he" && m != "him" && m != "his") out.push_back(i);
  }
  return out;
}

// Whether a sentence about occupation `o` uses female words: the stereotyped
// gender with probability beta; neutral occupations are uniform.
bool draw_female(const Occupation& o, double beta, RngStream& rng) {
  switch (o.direction) {
    case Stereotype::male: return !rng.bernoulli(beta);
    case Stereotype::female: return rng.bernoulli(beta);
    case Stereotype::neutral: return rng.bernoulli(0.5);
  }
  return false;
}

// Occupation for a task example written with female (or male) words.
const Occupation& draw_task_occupation(const Lexicon& lex, bool female, double label_bias,
                                       RngStream& rng) {
  static constexpr double kNeutralShare = 0.2;
  if (rng.bernoulli(kNeutralShare)) {
    auto pool = by_direction(lex, Stereotype::neutral);
    if (!pool.empty()) return *pick(pool, rng);
  }
  const bool congruent = rng.bernoulli(label_bias);
  const bool want_female = congruent ? female : !female;
  auto pool = by_direction(lex, want_female ? Stereotype::female : Stereotype::male);
  return *pick(pool, rng);
}

std::size_t occupation_index(const Lexicon& lex, const Occupation& o) {
  return static_cast<std::size_t>(&o - lex.gender.occupations.data());
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

}  // namespace

// ---- corpora --------------------------------------------------------------------

void CorpusSpec::validate() const {
  if (count < 1) throw ConfigError("corpus count must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("corpus beta must lie in [0, 1]");
}

Corpus gen_pretrain(const CorpusSpec& spec, const Lexicon& lex) {
  spec.validate();
  lex.gender.validate();
  RngStream rng(spec.seed);
  const auto nouns = noun_pairs(lex);
  const auto adjs = lex.all_adjectives();
  const std::size_t he = pair_index(lex, "he"), his = pair_index(lex, "his");
  Corpus out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const double r = rng.uniform();
    const Occupation& occ = pick(lex.gender.occupations, rng);
    std::vector<std::string> w{kClsToken, "the"};
    if (r < 0.45) {
      const bool female = draw_female(occ, spec.beta, rng);
      w.insert(w.end(), {occ.word, pick(lex.verbs, rng), gendered(lex, he, female), "is",
                         pick(adjs, rng)});
    } else if (r < 0.65) {
      const bool female = rng.bernoulli(0.5);
      w.insert(w.end(), {gendered(lex, pick(nouns, rng), female), pick(lex.verbs, rng),
                         gendered(lex, he, female), "is", pick(adjs, rng)});
    } else if (r < 0.85) {
      w.insert(w.end(), {occ.word, "works", "with", "the", pick(occ.context, rng)});
    } else {
      const bool female = draw_female(occ, spec.beta, rng);
      w.insert(w.end(), {occ.word, "said", "that", gendered(lex, his, female),
                         pick(occ.context, rng), "is", pick(adjs, rng)});
    }
    out.push_back(join(w));
  }
  return out;
}

Corpus cda_augment(const Corpus& corpus, const GenderLexicon& lex) {
  Corpus out;
  out.reserve(corpus.size() * 2);
  for (const auto& s : corpus) {
    auto words = split_words(s);
    bool gendered_sentence = false;
    for (auto& w : words) {
      std::string sw = lex.swap(w);
      if (!sw.empty()) {
        w = std::move(sw);
        gendered_sentence = true;
      }
    }
    out.push_back(s);
    if (gendered_sentence) out.push_back(join(words));
  }
  return out;
}

bool contains_female_word(std::string_view text, const GenderLexicon& lex) {
  for (const auto& w : split_words(text))
    if (lex.is_female(w)) return true;
  return false;
}

bool contains_male_word(std::string_view text, const GenderLexicon& lex) {
  for (const auto& w : split_words(text))
    if (lex.is_male(w)) return true;
  return false;
}

// ---- tasks ----------------------------------------------------------------------

void TaskSpec::validate() const {
  if (size < 1) throw ConfigError("task size must be >= 1");
  if (!(female_proportion >= 0.0 && female_proportion <= 1.0)) {
    throw ConfigError("female proportion must lie in [0, 1]");
  }
  if (!(label_bias >= 0.0 && label_bias <= 1.0)) {
    throw ConfigError("label bias must lie in [0, 1]");
  }
}

std::size_t TaskSpec::female_count() const {
  return std::min(size, round_half_up(female_proportion * static_cast<double>(size)));
}

namespace {

std::string random_other(const std::vector<std::string>& pool, const std::string& avoid,
                         const std::string& avoid2, RngStream& rng) {
  for (;;) {
    const std::string& w = pick(pool, rng);
    if (w != avoid && w != avoid2) return w;
  }
}

Example make_example(const Lexicon& lex, TaskKind kind, bool female, const Occupation& occ,
                     RngStream& rng) {
  const std::size_t he = pair_index(lex, "he");
  const auto adjs = lex.all_adjectives();
  Example ex;
  ex.female = female;
  std::vector<std::string> w{kClsToken};
  switch (kind) {
    case TaskKind::occupation: {
      // A short biography: gendered subject plus context words.
      if (rng.bernoulli(0.5)) {
        w.push_back(gendered(lex, he, female));
      } else {
        w.insert(w.end(), {"the", gendered(lex, pick(noun_pairs(lex), rng), female)});
      }
      std::vector<std::string> all_ctx;
      for (const auto& o : lex.gender.occupations)
        all_ctx.insert(all_ctx.end(), o.context.begin(), o.context.end());
      const std::size_t first = rng.uniform_index(occ.context.size());
      const std::string& c1 = occ.context[first];
      const std::string& c2 = rng.bernoulli(0.5) ? occ.context[(first + 1) % occ.context.size()]
                                                 : pick(all_ctx, rng);
      w.insert(w.end(), {"works", "with", "the", c1, "and", "the", c2});
      ex.label = occupation_index(lex, occ);
      break;
    }
    case TaskKind::entailment: {
      const std::size_t a = rng.uniform_index(lex.adjectives.size());
      const bool flip = rng.bernoulli(0.5);
      const std::string& adj = flip ? lex.adjectives[a].second : lex.adjectives[a].first;
      const std::string& ant = flip ? lex.adjectives[a].first : lex.adjectives[a].second;
      ex.label = rng.uniform_index(3);
      std::string adj2 = ex.label == kEntail       ? adj
                         : ex.label == kContradict ? ant
                                                   : random_other(adjs, adj, ant, rng);
      const std::string& p = gendered(lex, he, female);
      w.insert(w.end(), {"the", occ.word, pick(lex.verbs, rng), p, "is", adj, kSepToken, p,
                         "is", adj2});
      break;
    }
    case TaskKind::similarity: {
      const std::string& p = gendered(lex, he, female);
      const std::string adj = pick(adjs, rng);
      const std::string& verb = pick(lex.verbs, rng);
      ex.label = rng.uniform_index(2);
      std::string occ2 = occ.word, adj2 = adj;
      if (ex.label == 0) {
        const std::size_t what = rng.uniform_index(3);
        if (what != 1) {
          std::vector<std::string> occs;
          for (const auto& o : lex.gender.occupations) occs.push_back(o.word);
          occ2 = random_other(occs, occ.word, occ.word, rng);
        }
        if (what != 0) adj2 = random_other(adjs, adj, adj, rng);
      }
      w.insert(w.end(), {"the", occ.word, verb, p, "is", adj, kSepToken, "the", occ2, verb, p,
                         "is", adj2});
      break;
    }
  }
  ex.text = join(w);
  return ex;
}

}  // namespace

Dataset gen_task(const TaskSpec& spec, const Lexicon& lex) {
  spec.validate();
  lex.gender.validate();
  RngStream rng(spec.seed);
  const std::size_t nf = spec.female_count();
  std::vector<char> female(spec.size, 0);
  std::fill(female.begin(), female.begin() + static_cast<std::ptrdiff_t>(nf), 1);
  rng.fork(1).shuffle(female);
  Dataset d;
  d.kind = spec.kind;
  d.num_classes = num_classes(spec.kind);
  d.examples.reserve(spec.size);
  RngStream body = rng.fork(2);
  for (std::size_t i = 0; i < spec.size; ++i) {
    const bool f = female[i] != 0;
    const Occupation& occ = draw_task_occupation(lex, f, spec.label_bias, body);
    d.examples.push_back(make_example(lex, spec.kind, f, occ, body));
  }
  return d;
}

// ---- evaluation sets ----------------------------------------------------------------

namespace {

std::vector<const Occupation*> stereotyped(const Lexicon& lex) {
  std::vector<const Occupation*> out;
  for (const auto& o : lex.gender.occupations)
    if (o.direction != Stereotype::neutral) out.push_back(&o);
  if (out.empty()) throw ConfigError("lexicon has no stereotyped occupations");
  return out;
}

struct Slot {
  const Occupation* occ;
  std::string verb;
  std::string adj;
};

// Deterministic interleaved enumeration: occupation varies fastest.
Slot nth_slot(const Lexicon& lex, const std::vector<const Occupation*>& occs, std::size_t i) {
  const auto adjs = lex.all_adjectives();
  const std::size_t no = occs.size(), nv = lex.verbs.size();
  return {occs[i % no], lex.verbs[(i / no) % nv], adjs[(i / (no * nv)) % adjs.size()]};
}

}  // namespace

std::vector<InterventionEntry> gen_interventions(const Lexicon& lex, std::size_t count) {
  const auto occs = stereotyped(lex);
  const std::size_t he = pair_index(lex, "he"), man = pair_index(lex, "man");
  std::vector<InterventionEntry> out;
  for (std::size_t i = 0; i < count; ++i) {
    Slot s = nth_slot(lex, occs, i);
    const bool fem_occ = s.occ->direction == Stereotype::female;
    auto prompt = [&](const std::string& subject) {
      return join({kClsToken, "the", subject, s.verb, kMaskToken, "is", s.adj});
    };
    InterventionEntry e;
    e.base = prompt(s.occ->word);
    // The explicit gender noun opposite to the stereotype.
    e.intervened = prompt(gendered(lex, man, !fem_occ));
    e.anti = gendered(lex, he, !fem_occ);
    e.stereo = gendered(lex, he, fem_occ);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ProbeEntry> gen_probes(const Lexicon& lex, std::size_t count) {
  if (lex.meaningless.empty()) throw ConfigError("lexicon has no meaningless words");
  const auto occs = stereotyped(lex);
  const std::size_t he = pair_index(lex, "he");
  std::vector<ProbeEntry> out;
  for (std::size_t i = 0; i < count; ++i) {
    Slot s = nth_slot(lex, occs, i);
    const bool fem_occ = s.occ->direction == Stereotype::female;
    ProbeEntry p;
    p.context = join({kClsToken, "the", s.occ->word, s.verb, kMaskToken, "is", s.adj});
    p.stereo = gendered(lex, he, fem_occ);
    p.anti = gendered(lex, he, !fem_occ);
    p.meaningless = lex.meaningless[i % lex.meaningless.size()];
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ParallelPair> gen_extrinsic_eval(const Lexicon& lex, TaskKind kind,
                                             std::size_t count, std::uint64_t seed) {
  lex.gender.validate();
  RngStream rng(seed);
  std::vector<ParallelPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Occupation& occ = pick(lex.gender.occupations, rng);
    ParallelPair pp;
    pp.male = make_example(lex, kind, false, occ, rng);
    pp.female = pp.male;
    pp.female.female = true;
    auto words = split_words(pp.male.text);
    for (auto& w : words) {
      std::string sw = lex.gender.swap(w);
      if (!sw.empty()) w = std::move(sw);
    }
    pp.female.text = join(words);
    out.push_back(std::move(pp));
  }
  return out;
}

// ---- serialization --------------------------------------------------------------------

void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& s : corpus) f << s << '\n';
}

Corpus read_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  Corpus out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "text,label,gender_flag\n";
  for (const auto& e : data.examples) f << e.text << ',' << e.label << ',' << (e.female ? 1 : 0) << '\n';
}

Dataset read_dataset_csv(const std::string& path, TaskKind kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  Dataset d;
  d.kind = kind;
  d.num_classes = num_classes(kind);
  std::string line;
  std::getline(f, line);
  if (line != "text,label,gender_flag") throw std::runtime_error(path + ": unexpected header");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c2 = line.rfind(','), c1 = line.rfind(',', c2 - 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::runtime_error(path + ": malformed row '" + line + "'");
    }
    Example e;
    e.text = line.substr(0, c1);
    e.label = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
    e.female = line.substr(c2 + 1) == "1";
    if (e.label >= d.num_classes) throw std::runtime_error(path + ": label out of range");
    d.examples.push_back(std::move(e));
  }
  return d;
}

}  // namespace pstn
