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

// Synthetic corpora over a closed vocabulary: biased pretraining text,
// counterfactual augmentation, downstream classification tasks, mediation
// prompts and intrinsic-bias probes.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pstn/model.hpp"

namespace pstn {

enum class Stereotype { male, female, neutral };
const char* to_string(Stereotype s);

struct Occupation {
  std::string word;
  Stereotype direction = Stereotype::neutral;
  // Words that appear around this occupation in descriptive sentences.
  std::vector<std::string> context;
};

struct GenderLexicon {
  // (male, female) word pairs.
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<Occupation> occupations;

  // Throws ConfigError on overlapping pairs or an empty lexicon.
  void validate() const;
  // The counterpart of a gendered word, or empty when `w` is not gendered.
  std::string swap(std::string_view w) const;
  bool is_male(std::string_view w) const;
  bool is_female(std::string_view w) const;
};

// The full closed language.
struct Lexicon {
  GenderLexicon gender;
  std::vector<std::string> verbs;  // reporting verbs: "said", "thinks", ...
  // (adjective, antonym) pairs; both members are ordinary adjectives.
  std::vector<std::pair<std::string, std::string>> adjectives;
  // Words never used by any template; LM-score distractors.
  std::vector<std::string> meaningless;
  std::vector<std::string> function_words;

  std::vector<std::string> all_adjectives() const;
  const Occupation& occupation(std::string_view word) const;
};

Lexicon default_lexicon();

class UnknownTokenError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kMaskToken = "[MASK]";
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";

// Whitespace tokenizer over the lexicon. Ids: [PAD]=0, [MASK]=1, [CLS]=2,
// [SEP]=3, then words in lexicon order.
class Vocabulary {
 public:
  explicit Vocabulary(const Lexicon& lex);

  std::size_t size() const { return words_.size(); }
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  bool contains(std::string_view word) const;
  TokenId mask_id() const { return 1; }
  TokenId cls_id() const { return 2; }
  TokenId sep_id() const { return 3; }

  Sequence encode(std::string_view text) const;
  std::string decode(const Sequence& ids) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, TokenId, std::less<>> index_;
};

std::vector<std::string> split_words(std::string_view text);

// ---- corpora --------------------------------------------------------------

struct CorpusSpec {
  std::size_t count = 4000;
  // Probability that a stereotyped occupation appears with its stereotyped
  // gender word. 0.5 makes gender independent of occupation.
  double beta = 0.9;
  std::uint64_t seed = 0;
  void validate() const;
};

using Corpus = std::vector<std::string>;

Corpus gen_pretrain(const CorpusSpec& spec, const Lexicon& lex);

// Every sentence containing a gendered word is emitted twice: as-is and with
// every gendered word swapped. Other sentences pass through once.
Corpus cda_augment(const Corpus& corpus, const GenderLexicon& lex);

bool contains_female_word(std::string_view text, const GenderLexicon& lex);
bool contains_male_word(std::string_view text, const GenderLexicon& lex);

// ---- downstream tasks -------------------------------------------------------

enum class TaskKind { occupation, entailment, similarity };
const char* to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);
std::size_t num_classes(TaskKind k);

// Entailment labels.
inline constexpr std::size_t kEntail = 0;
inline constexpr std::size_t kNeutral = 1;
inline constexpr std::size_t kContradict = 2;

struct TaskSpec {
  std::size_t size = 1000;
  double female_proportion = 0.0;
  std::uint64_t seed = 0;
  TaskKind kind = TaskKind::occupation;
  // Probability that an example's occupation matches the stereotype of its
  // gender words; the source of gender-label correlation in the data.
  double label_bias = 0.8;
  void validate() const;
  // round-half-up(female_proportion * size)
  std::size_t female_count() const;
};

struct Example {
  std::string text;
  std::size_t label = 0;
  bool female = false;
};

struct Dataset {
  TaskKind kind = TaskKind::occupation;
  std::size_t num_classes = 0;
  std::vector<Example> examples;
};

Dataset gen_task(const TaskSpec& spec, const Lexicon& lex);

// ---- evaluation sets --------------------------------------------------------

// Prompts with one [MASK] slot. `intervened` swaps the occupation for the
// gender noun opposite to its stereotype.
struct InterventionEntry {
  std::string base;
  std::string intervened;
  std::string anti;    // anti-stereotypical candidate for `base`
  std::string stereo;  // stereotypical candidate for `base`
};

std::vector<InterventionEntry> gen_interventions(const Lexicon& lex, std::size_t count);

struct ProbeEntry {
  std::string context;  // contains exactly one [MASK]
  std::string stereo;
  std::string anti;
  std::string meaningless;
};

std::vector<ProbeEntry> gen_probes(const Lexicon& lex, std::size_t count);

// The same example rendered with male words and with every gendered word
// swapped to its female counterpart.
struct ParallelPair {
  Example male;
  Example female;
};

std::vector<ParallelPair> gen_extrinsic_eval(const Lexicon& lex, TaskKind kind,
                                             std::size_t count, std::uint64_t seed);

// ---- serialization ----------------------------------------------------------

void write_corpus(const std::string& path, const Corpus& corpus);
Corpus read_corpus(const std::string& path);
// Columns: text,label,gender_flag
void write_dataset_csv(const std::string& path, const Dataset& data);
Dataset read_dataset_csv(const std::string& path, TaskKind kind);

}  // namespace pstn
