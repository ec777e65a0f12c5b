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

#include "pstn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "pstn/hash.hpp"
#include "pstn/rng.hpp"

namespace pstn {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects whatever was not consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  void get_size(const char* key, std::size_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(path_ + "." + key + " must be a non-negative integer");
    }
    out = v.get<std::size_t>();
  }

  // null or absent leaves the value empty.
  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) {
      out.reset();
      return;
    }
    if (!j_.at(key).is_number()) throw ConfigError(path_ + "." + key + " must be a number or null");
    out = j_.at(key).get<double>();
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  template <class F>
  void get_parsed(const char* key, F parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(path_ + "." + key + " must be a string");
    try {
      parse(j_.at(key).get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section s, TrainConfig& t) {
  s.get_size("epochs", t.epochs);
  s.get_size("batch_size", t.batch_size);
  s.get("lr", t.adam.lr);
  s.get("beta1", t.adam.beta1);
  s.get("beta2", t.adam.beta2);
  s.get("eps", t.adam.eps);
  s.get("weight_decay", t.adam.weight_decay);
  s.get("mask_prob", t.mask_prob);
  s.get_size("patience", t.patience);
  s.get("holdout_fraction", t.holdout_fraction);
  s.finish();
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},       {"batch_size", t.batch_size},
          {"lr", t.adam.lr},          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},    {"eps", t.adam.eps},
          {"weight_decay", t.adam.weight_decay}, {"mask_prob", t.mask_prob},
          {"patience", t.patience},   {"holdout_fraction", t.holdout_fraction}};
}

void read_corpus_stage(Section s, CorpusStage& c) {
  s.get_size("count", c.count);
  s.get("beta", c.beta);
  read_train(s.sub("train"), c.train);
  s.finish();
}

json corpus_stage_json(const CorpusStage& c) {
  return {{"count", c.count}, {"beta", c.beta}, {"train", train_json(c.train)}};
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.pretrain.count = 4000;
  c.pretrain.train.epochs = 30;
  c.pretrain.train.adam.lr = 1e-3;
  c.pretrain.train.adam.eps = 1e-8;
  c.pretrain.train.patience = 0;
  c.cda.count = 2000;
  c.cda.train = c.pretrain.train;
  c.cda.train.epochs = 20;
  c.converge.epochs = 35;
  c.converge.patience = 0;
  return c;
}

void ExperimentConfig::validate() const {
  if (model.layers < 1 || model.heads < 1) throw ConfigError("model needs at least one layer and head");
  if (model.width % model.heads != 0) throw ConfigError("model.width must be divisible by model.heads");
  if (model.max_len < 8) throw ConfigError("model.max_len must be >= 8 to hold the templates");
  if (!(model.init_std > 0.0)) throw ConfigError("model.init_std must be positive");
  for (const CorpusStage* s : {&pretrain, &cda}) {
    if (s->count < 1) throw ConfigError("corpus count must be >= 1");
    if (!(s->beta >= 0.0 && s->beta <= 1.0)) throw ConfigError("corpus beta must lie in [0, 1]");
    s->train.validate();
  }
  if (cma.interventions < 1) throw ConfigError("cma.interventions must be >= 1");
  TaskSpec ts;
  ts.size = task.size;
  ts.female_proportion = task.female_proportion;
  ts.label_bias = task.label_bias;
  ts.validate();
  converge.validate();
  finetune.train.validate();
  noise_config(0).validate();
  if (estimate.lambda && !(*estimate.lambda >= 0.0)) throw ConfigError("estimate.lambda must be >= 0");
  if (!(finetune.gamma >= 0.0)) throw ConfigError("finetune.gamma must be >= 0");
  if (eval.probes < 1 || eval.extrinsic_pairs < 1) throw ConfigError("eval sizes must be >= 1");
  if (sweep.rho.empty() || sweep.sizes.empty()) throw ConfigError("sweep grids must be non-empty");
  for (double r : sweep.rho) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep.rho values must lie in [0, 1]");
  }
  for (std::size_t m : sweep.sizes) {
    if (m < 10) throw ConfigError("sweep.sizes values must be >= 10");
  }
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must be non-empty");
}

ModelConfig ExperimentConfig::model_config(std::size_t vocab_size, std::uint64_t init_seed) const {
  ModelConfig m;
  m.layers = model.layers;
  m.heads = model.heads;
  m.width = model.width;
  m.ff_width = model.ff_width;
  m.max_len = model.max_len;
  m.init_std = model.init_std;
  m.tie_lm_head = model.tie_lm_head;
  m.vocab_size = vocab_size;
  m.init_seed = init_seed;
  return m;
}

double ExperimentConfig::lambda_for(std::size_t m) const {
  if (estimate.lambda) return *estimate.lambda;
  if (m == 0) throw ConfigError("lambda = 1/m needs m >= 1");
  return 1.0 / static_cast<double>(m);
}

NoiseConfig ExperimentConfig::noise_config(std::uint64_t seed) const {
  NoiseConfig n;
  n.epochs = estimate.epochs;
  n.batch_size = estimate.batch_size;
  n.lr_pretrained = estimate.lr_omega_q;
  n.lr_classifier = estimate.lr_classifier;
  n.beta1 = estimate.beta1;
  n.beta2 = estimate.beta2;
  n.eps = estimate.eps;
  n.samples = estimate.samples;
  n.min_train_accuracy = estimate.min_train_accuracy;
  n.seed = seed;
  return n;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_config();
  Section root(j, "config");
  {
    Section s = root.sub("model");
    s.get_size("layers", c.model.layers);
    s.get_size("heads", c.model.heads);
    s.get_size("width", c.model.width);
    s.get_size("ff_width", c.model.ff_width);
    s.get_size("max_len", c.model.max_len);
    s.get("init_std", c.model.init_std);
    s.get("tie_lm_head", c.model.tie_lm_head);
    s.finish();
  }
  read_corpus_stage(root.sub("pretrain"), c.pretrain);
  read_corpus_stage(root.sub("cda"), c.cda);
  {
    Section s = root.sub("cma");
    s.get_size("interventions", c.cma.interventions);
    s.get_parsed("mode", [&](const std::string& v) { c.cma.mode = parse_effect_mode(v); });
    s.get_parsed("mask", [&](const std::string& v) { c.cma.mask = parse_mask_mode(v); });
    s.finish();
  }
  {
    Section s = root.sub("task");
    s.get_parsed("kind", [&](const std::string& v) { c.task.kind = parse_task_kind(v); });
    s.get_size("size", c.task.size);
    s.get("female_proportion", c.task.female_proportion);
    s.get("label_bias", c.task.label_bias);
    s.finish();
  }
  read_train(root.sub("converge"), c.converge);
  {
    Section s = root.sub("estimate");
    s.get_size("epochs", c.estimate.epochs);
    s.get_size("batch_size", c.estimate.batch_size);
    s.get("lr_omega_q", c.estimate.lr_omega_q);
    s.get("lr_classifier", c.estimate.lr_classifier);
    s.get("beta1", c.estimate.beta1);
    s.get("beta2", c.estimate.beta2);
    s.get("eps", c.estimate.eps);
    s.get_size("samples", c.estimate.samples);
    s.get("min_train_accuracy", c.estimate.min_train_accuracy);
    s.get_optional("lambda", c.estimate.lambda);
    s.finish();
  }
  {
    Section s = root.sub("finetune");
    Section t = s.sub("train");
    read_train(t, c.finetune.train);
    s.get_parsed("regularizer", [&](const std::string& v) { c.finetune.regularizer = parse_reg_kind(v); });
    s.get("gamma", c.finetune.gamma);
    s.get_size("random_count", c.finetune.random_count);
    s.finish();
  }
  {
    Section s = root.sub("eval");
    s.get_size("probes", c.eval.probes);
    s.get_size("extrinsic_pairs", c.eval.extrinsic_pairs);
    s.finish();
  }
  {
    Section s = root.sub("sweep");
    s.get("rho", c.sweep.rho);
    s.get("sizes", c.sweep.sizes);
    s.get_size("epochs", c.sweep.epochs);
    s.finish();
  }
  root.get("seeds", c.seeds);
  root.get("base_seed", c.base_seed);
  root.get("output_dir", c.output_dir);
  root.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["model"] = {{"layers", c.model.layers},     {"heads", c.model.heads},
                {"width", c.model.width},       {"ff_width", c.model.ff_width},
                {"max_len", c.model.max_len},   {"init_std", c.model.init_std},
                {"tie_lm_head", c.model.tie_lm_head}};
  j["pretrain"] = corpus_stage_json(c.pretrain);
  j["cda"] = corpus_stage_json(c.cda);
  j["cma"] = {{"interventions", c.cma.interventions},
              {"mode", to_string(c.cma.mode)},
              {"mask", to_string(c.cma.mask)}};
  j["task"] = {{"kind", to_string(c.task.kind)},
               {"size", c.task.size},
               {"female_proportion", c.task.female_proportion},
               {"label_bias", c.task.label_bias}};
  j["converge"] = train_json(c.converge);
  j["estimate"] = {{"epochs", c.estimate.epochs},
                   {"batch_size", c.estimate.batch_size},
                   {"lr_omega_q", c.estimate.lr_omega_q},
                   {"lr_classifier", c.estimate.lr_classifier},
                   {"beta1", c.estimate.beta1},
                   {"beta2", c.estimate.beta2},
                   {"eps", c.estimate.eps},
                   {"samples", c.estimate.samples},
                   {"min_train_accuracy", c.estimate.min_train_accuracy},
                   {"lambda", c.estimate.lambda ? json(*c.estimate.lambda) : json(nullptr)}};
  j["finetune"] = {{"train", train_json(c.finetune.train)},
                   {"regularizer", to_string(c.finetune.regularizer)},
                   {"gamma", c.finetune.gamma},
                   {"random_count", c.finetune.random_count}};
  j["eval"] = {{"probes", c.eval.probes}, {"extrinsic_pairs", c.eval.extrinsic_pairs}};
  j["sweep"] = {{"rho", c.sweep.rho}, {"sizes", c.sweep.sizes}, {"epochs", c.sweep.epochs}};
  j["seeds"] = c.seeds;
  j["base_seed"] = c.base_seed;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t stage_seed(std::uint64_t run_seed, std::string_view stage) {
  return mix64(mix64(run_seed) ^ fnv1a64(stage));
}

}  // namespace pstn
