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

// pstn: command-line driver for every pipeline stage.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pstn/pipeline.hpp"

using namespace pstn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma;
  std::optional<double> lambda;
  std::optional<std::size_t> epochs;
  std::optional<double> rho;
  std::optional<std::size_t> size;
  std::optional<std::string> mode;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "experiment config (JSON)")->required();
  app->add_option("--out", c.out, "output directory");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config_path);
  if (c.gamma) cfg.finetune.gamma = *c.gamma;
  if (c.lambda) cfg.estimate.lambda = *c.lambda;
  if (c.rho) cfg.task.female_proportion = *c.rho;
  if (c.size) cfg.task.size = *c.size;
  if (c.mode) cfg.cma.mode = parse_effect_mode(*c.mode);
  cfg.validate();
  return cfg;
}

std::string out_dir(const Common& c, const ExperimentConfig& cfg, const std::string& name) {
  std::string d = c.out.empty() ? cfg.output_dir + "/" + name : c.out;
  fs::create_directories(d);
  return d;
}

RunManifest start_manifest(const std::string& command, const ExperimentConfig& cfg, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.tool_version = kToolVersion;
  m.config = config_to_json(cfg);
  m.seed = seed;
  return m;
}

TransformerLM load_model(const std::string& path, RunManifest& m, const std::string& role) {
  m.inputs[role] = hex64(file_hash(path));
  return model_from_checkpoint(load_checkpoint(path));
}

void finish(RunManifest& m, const std::string& dir, const std::vector<std::string>& files) {
  for (const auto& f : files) m.record_output(dir, f);
  save_manifest(dir + "/manifest.json", m);
  std::cout << "wrote " << dir << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& tok : split_list(s)) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        out.push_back(std::stod(tok, &used));
      } else {
        out.push_back(static_cast<T>(std::stoull(tok, &used)));
      }
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " list entry '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

HeadMask mask_from_files(const ExperimentConfig& cfg, const std::string& b0, const std::string& ba,
                         RunManifest& m) {
  if (b0.empty() || ba.empty()) throw ConfigError("this regularizer needs --b0 and --ba");
  m.inputs["b0"] = hex64(file_hash(b0));
  m.inputs["ba"] = hex64(file_hash(ba));
  return debiased_mask(read_head_matrix_csv(b0), read_head_matrix_csv(ba), cfg.cma.mask);
}

int run(int argc, char** argv) {
  CLI::App app{"Debias-then-tune experiments on a tiny masked transformer"};
  app.require_subcommand(1);
  Common c;

  auto* pre = app.add_subcommand("pretrain", "pretrain the masked LM on the biased corpus");
  add_common(pre, c);
  pre->add_option("--epochs", c.epochs);

  auto* cda = app.add_subcommand("cda", "continue MLM training on the augmented corpus");
  add_common(cda, c);
  std::string model_path;
  cda->add_option("--model", model_path, "pretrained checkpoint")->required();
  cda->add_option("--epochs", c.epochs);

  auto* cma = app.add_subcommand("cma", "per-head mediation effects");
  add_common(cma, c);
  cma->add_option("--model", model_path)->required();
  cma->add_option("--mode", c.mode, "indirect|total");

  auto* est = app.add_subcommand("estimate", "converge on the task, then learn noise variances");
  add_common(est, c);
  est->add_option("--model", model_path, "debiased checkpoint")->required();
  est->add_option("--seed", c.seed);
  est->add_option("--lambda", c.lambda);
  est->add_option("--epochs", c.epochs, "noise-estimation epochs");
  est->add_option("--rho", c.rho);
  est->add_option("--size", c.size);

  auto* ft = app.add_subcommand("finetune", "fine-tune a model on the downstream task");
  add_common(ft, c);
  ft->add_option("--model", model_path)->required();
  std::string b0_path, ba_path, importance_path, regularizer;
  ft->add_option("--b0", b0_path, "pretrained effects CSV");
  ft->add_option("--ba", ba_path, "debiased effects CSV");
  ft->add_option("--importance", importance_path, "importance checkpoint");
  ft->add_option("--regularizer", regularizer, "none|prosocial|uniform|random_heads");
  ft->add_option("--seed", c.seed);
  ft->add_option("--gamma", c.gamma);
  ft->add_option("--epochs", c.epochs);
  ft->add_option("--rho", c.rho);
  ft->add_option("--size", c.size);

  auto* pipe = app.add_subcommand("pipeline", "pretrain, debias, estimate importance and fine-tune");
  add_common(pipe, c);
  std::string replay_path;
  pipe->add_option("--seed", c.seed);
  pipe->add_option("--gamma", c.gamma);
  pipe->add_option("--lambda", c.lambda);
  pipe->add_option("--epochs", c.epochs, "fine-tuning epochs");
  pipe->add_option("--rho", c.rho);
  pipe->add_option("--size", c.size);
  pipe->add_option("--mode", c.mode);

  auto* rep_cmd = app.add_subcommand("replay", "re-run a manifest and compare output hashes");
  rep_cmd->add_option("manifest", replay_path)->required();
  rep_cmd->add_option("--out", c.out)->required();

  auto* sw = app.add_subcommand("sweep", "bias-level by dataset-size sweep");
  add_common(sw, c);
  std::string rho_list, size_list, seed_list;
  bool deterministic = false;
  sw->add_option("--rho", rho_list, "comma-separated female proportions");
  sw->add_option("--size", size_list, "comma-separated training-set sizes");
  sw->add_option("--seeds", seed_list, "comma-separated seeds");
  sw->add_option("--epochs", c.epochs, "fine-tuning epochs per cell");
  sw->add_flag("--deterministic", deterministic, "single worker");

  auto* ev = app.add_subcommand("eval", "bias metrics for one checkpoint");
  add_common(ev, c);
  ev->add_option("--model", model_path)->required();
  ev->add_option("--seed", c.seed);

  auto* rp = app.add_subcommand("report", "summary tables");
  add_common(rp, c);
  std::string sweep_dir, methods = "vanilla,debiased,prosocial,uniform,random_heads";
  bool compare = false;
  rp->add_option("--sweep", sweep_dir, "re-aggregate a sweep directory");
  rp->add_flag("--compare", compare, "fine-tune with every method and tabulate");
  rp->add_option("--methods", methods);
  rp->add_option("--seeds", seed_list);
  rp->add_option("--gamma", c.gamma);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (rep_cmd->parsed()) {
    const auto diff = replay(replay_path, c.out);
    if (!diff.empty()) {
      for (const auto& f : diff) std::cerr << "hash mismatch: " << f << "\n";
      throw StageError("replay", std::to_string(diff.size()) + " output(s) differ");
    }
    std::cout << "replay reproduced every output hash\n";
    return 0;
  }

  const ExperimentConfig base_cfg = load(c);
  ExperimentConfig cfg = base_cfg;
  const std::uint64_t seed = c.seed.value_or(cfg.seeds.front());
  const Workspace ws(cfg);

  if (pre->parsed()) {
    if (c.epochs) cfg.pretrain.train.epochs = *c.epochs;
    const std::string dir = out_dir(c, cfg, "pretrain");
    RunManifest m = start_manifest("pretrain", cfg, cfg.base_seed);
    RunArtifacts run;
    TransformerLM f0 = stage_pretrain(cfg, ws, &run);
    save_checkpoint(dir + "/f0.ckpt", model_checkpoint(f0));
    write_file(dir + "/losses.json", json({{"epoch_losses", run.epoch_losses}}).dump(2) + "\n");
    finish(m, dir, {"f0.ckpt", "losses.json"});
  } else if (cda->parsed()) {
    if (c.epochs) cfg.cda.train.epochs = *c.epochs;
    const std::string dir = out_dir(c, cfg, "cda");
    RunManifest m = start_manifest("cda", cfg, cfg.base_seed);
    const TransformerLM f0 = load_model(model_path, m, "f0");
    RunArtifacts run;
    TransformerLM fa = stage_cda(cfg, ws, f0, &run);
    save_checkpoint(dir + "/fA.ckpt", model_checkpoint(fa));
    write_file(dir + "/losses.json", json({{"epoch_losses", run.epoch_losses}}).dump(2) + "\n");
    finish(m, dir, {"fA.ckpt", "losses.json"});
  } else if (cma->parsed()) {
    const std::string dir = out_dir(c, cfg, "cma");
    RunManifest m = start_manifest("cma", cfg, 0);
    const TransformerLM model = load_model(model_path, m, "model");
    const HeadEffectMatrix e = stage_cma(cfg, ws, model, fs::path(model_path).filename().string());
    write_head_matrix_csv(dir + "/effects.csv", e.effects, "effect", e.provenance);
    m.extra["mode"] = to_string(cfg.cma.mode);
    finish(m, dir, {"effects.csv"});
  } else if (est->parsed()) {
    if (c.epochs) cfg.estimate.epochs = *c.epochs;
    const std::string dir = out_dir(c, cfg, "estimate");
    RunManifest m = start_manifest("estimate", cfg, seed);
    const TransformerLM fa = load_model(model_path, m, "fA");
    const Dataset data = make_task(cfg, ws.lex, seed);
    ImportanceRun r = stage_importance(cfg, ws, fa, data, seed);
    Checkpoint ck;
    ck.meta["kind"] = "importance";
    put_noise(ck, r.estimate.noise);
    put_importance(ck, r.importance);
    save_checkpoint(dir + "/importance.ckpt", ck);
    write_head_matrix_csv(dir + "/importance.csv", r.importance.heads, "importance", "a^G");
    m.warnings = r.estimate.warnings;
    m.extra["train_accuracy"] = r.estimate.train_accuracy;
    m.extra["kl"] = r.estimate.final_kl;
    m.extra["pac_bayes_bound"] =
        pac_bayes_bound(r.estimate.final_train_loss, r.estimate.final_kl, data.examples.size());
    finish(m, dir, {"importance.ckpt", "importance.csv"});
  } else if (ft->parsed()) {
    if (c.epochs) cfg.finetune.train.epochs = *c.epochs;
    if (!regularizer.empty()) cfg.finetune.regularizer = parse_reg_kind(regularizer);
    const std::string dir = out_dir(c, cfg, "finetune");
    RunManifest m = start_manifest("finetune", cfg, seed);
    const TransformerLM start = load_model(model_path, m, "model");
    const Dataset data = make_task(cfg, ws.lex, seed);
    HeadMask mask;
    ImportanceMatrix importance;
    const RegKind kind = cfg.finetune.regularizer;
    if (kind == RegKind::prosocial || kind == RegKind::random_heads) {
      mask = mask_from_files(cfg, b0_path, ba_path, m);
    }
    if (kind == RegKind::prosocial) {
      if (importance_path.empty()) throw ConfigError("the prosocial regularizer needs --importance");
      m.inputs["importance"] = hex64(file_hash(importance_path));
      const Checkpoint ck = load_checkpoint(importance_path);
      const Tensor* t = ck.find("importance.heads");
      if (!t) throw CheckpointError(importance_path + " holds no head importance");
      importance.heads = HeadMatrix(t->shape.at(0), t->shape.at(1));
      importance.heads.values = t->data;
    }
    if (kind == RegKind::uniform) {
      const auto& mc = start.config();
      mask = HeadMask{mc.layers, mc.heads, std::vector<bool>(mc.layers * mc.heads, true)};
    }
    const RegularizerSpec reg = make_regularizer(cfg, kind, cfg.finetune.gamma, start, mask, importance, seed);
    FinetuneRun r = stage_finetune(ws, start, data, reg, cfg.finetune.train, seed);
    save_checkpoint(dir + "/fT.ckpt", model_checkpoint(r.model));
    ParallelPredictions preds;
    const BiasReport rep = evaluate(cfg, ws, r.model, ModelCategory::debiased_fine_tuned, seed, &preds);
    write_predictions_csv(dir + "/predictions.csv", preds);
    json j = report_to_json(rep);
    j["epoch_losses"] = r.run.epoch_losses;
    j["epoch_regularizer"] = r.run.epoch_regularizer;
    j["best_epoch"] = r.run.best_epoch;
    write_file(dir + "/report.json", j.dump(2) + "\n");
    m.warnings = r.run.warnings;
    finish(m, dir, {"fT.ckpt", "predictions.csv", "report.json"});
  } else if (pipe->parsed()) {
    if (c.epochs) cfg.finetune.train.epochs = *c.epochs;
    const std::string dir = out_dir(c, cfg, "pipeline-s" + std::to_string(seed));
    PipelineResult r = run_pipeline(cfg, seed, dir);
    for (const auto& w : r.manifest.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& rep : r.reports) {
      std::printf("%-20s stereoset %6.2f  lm %6.2f\n", to_string(rep.category), rep.stereoset, rep.lm);
    }
    std::cout << "wrote " << dir << "\n";
  } else if (sw->parsed()) {
    if (c.epochs) cfg.sweep.epochs = *c.epochs;
    SweepOptions o;
    o.rho = rho_list.empty() ? cfg.sweep.rho : parse_list<double>(rho_list, "rho");
    o.sizes = size_list.empty() ? cfg.sweep.sizes : parse_list<std::size_t>(size_list, "size");
    o.seeds = seed_list.empty() ? cfg.seeds : parse_list<std::uint64_t>(seed_list, "seed");
    o.workers = worker_count(deterministic);
    const std::string dir = out_dir(c, cfg, "sweep");
    const SweepResult res = run_sweep(cfg, o, dir);
    std::cout << res.rows.size() << " rows, " << res.cells.size() << " cells\nwrote " << dir << "\n";
  } else if (ev->parsed()) {
    const std::string dir = out_dir(c, cfg, "eval");
    RunManifest m = start_manifest("eval", cfg, seed);
    const TransformerLM model = load_model(model_path, m, "model");
    ParallelPredictions preds;
    const BiasReport rep = evaluate(cfg, ws, model, ModelCategory::pretrained, seed, &preds);
    write_file(dir + "/report.json", report_to_json(rep).dump(2) + "\n");
    std::vector<std::string> files{"report.json"};
    if (model.weights().has_cls) {
      write_predictions_csv(dir + "/predictions.csv", preds);
      files.push_back("predictions.csv");
    }
    std::printf("stereoset %.2f  lm %.2f\n", rep.stereoset, rep.lm);
    finish(m, dir, files);
  } else if (rp->parsed()) {
    const std::string dir = out_dir(c, cfg, "report");
    RunManifest m = start_manifest("report", cfg, 0);
    std::vector<std::string> files;
    if (!sweep_dir.empty()) {
      const std::string rows_path = sweep_dir + "/figure1_analog.csv";
      m.inputs["figure1_analog.csv"] = hex64(file_hash(rows_path));
      write_sweep_summary_csv(dir + "/sweep_summary.csv", aggregate(read_figure1_csv(rows_path)));
      files.push_back("sweep_summary.csv");
    }
    if (compare) {
      const auto seeds = seed_list.empty() ? cfg.seeds : parse_list<std::uint64_t>(seed_list, "seed");
      const ComparisonResult res = compare_methods(cfg, seeds, split_list(methods), dir);
      for (const auto& row : res.table3) {
        std::printf("%-14s %6.2f -> %6.2f (%+.2f)\n", row.method.c_str(), row.debiased_score,
                    row.finetuned_score, row.delta());
      }
      files.push_back("table3_analog.csv");
      files.push_back("methods.csv");
    }
    if (files.empty()) throw ConfigError("report needs --sweep DIR and/or --compare");
    finish(m, dir, files);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const UnknownTokenError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const StageError& e) {
    std::cerr << "stage " << e.stage() << " failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return 2;
  }
}
