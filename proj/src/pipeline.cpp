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

#include "pstn/pipeline.hpp"

#include <omp.h>

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "pstn/hash.hpp"

namespace pstn {

namespace fs = std::filesystem;
using nlohmann::json;

Workspace::Workspace(const ExperimentConfig& cfg) : lex(default_lexicon()), vocab(lex) {
  for (const auto& e : gen_interventions(lex, cfg.cma.interventions)) {
    interventions.push_back(prepare_intervention(e, vocab));
  }
  probes = gen_probes(lex, cfg.eval.probes);
}

namespace {

std::uint64_t corpus_hash(const Corpus& c) {
  Fnv64 h;
  for (const auto& line : c) {
    h.update(line);
    h.update("\n");
  }
  return h.digest();
}

Corpus pretrain_corpus(const ExperimentConfig& cfg, const Workspace& ws) {
  return gen_pretrain({cfg.pretrain.count, cfg.pretrain.beta, stage_seed(cfg.base_seed, "pretrain.corpus")},
                      ws.lex);
}

Corpus cda_corpus(const ExperimentConfig& cfg, const Workspace& ws) {
  return cda_augment(
      gen_pretrain({cfg.cda.count, cfg.cda.beta, stage_seed(cfg.base_seed, "cda.corpus")}, ws.lex),
      ws.lex.gender);
}

// Times `f` into the manifest and converts runtime failures to StageError.
template <class F>
auto timed_stage(const std::string& name, RunManifest* manifest, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&] {
    if (manifest) {
      manifest->stage_seconds[name] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record();
    } else {
      auto r = f();
      record();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir + ": " + ec.message());
}

json mask_json(const HeadMask& m) {
  json j = json::array();
  for (std::size_t l = 0; l < m.layers; ++l) {
    json row = json::array();
    for (std::size_t k = 0; k < m.heads; ++k) row.push_back(m.at(l, k) ? 1 : 0);
    j.push_back(row);
  }
  return j;
}

}  // namespace

double mean_eligible_distance(const TransformerLM& model, const ParamSnapshot& ref, const HeadMask& mask) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& h : all_heads(model.config())) {
    if (!mask.at(h.layer, h.head)) continue;
    s += std::sqrt(head_sq_distance(model, ref, h));
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

// ---- stages ---------------------------------------------------------------------------

TransformerLM stage_pretrain(const ExperimentConfig& cfg, const Workspace& ws, RunArtifacts* run) {
  TransformerLM f0(cfg.model_config(ws.vocab.size(), stage_seed(cfg.base_seed, "init")));
  TrainConfig t = cfg.pretrain.train;
  t.seed = stage_seed(cfg.base_seed, "pretrain.train");
  RunArtifacts a = pretrain(f0, ws.vocab, pretrain_corpus(cfg, ws), t);
  if (run) *run = std::move(a);
  return f0;
}

TransformerLM stage_cda(const ExperimentConfig& cfg, const Workspace& ws, const TransformerLM& f0,
                        RunArtifacts* run) {
  TransformerLM fa = f0;
  TrainConfig t = cfg.cda.train;
  t.seed = stage_seed(cfg.base_seed, "cda.train");
  RunArtifacts a = debias_cda(fa, ws.vocab, cda_corpus(cfg, ws), t);
  if (run) *run = std::move(a);
  return fa;
}

BaseModels build_base_models(const ExperimentConfig& cfg, const Workspace& ws) {
  RunArtifacts pre, cda;
  TransformerLM f0 = stage_pretrain(cfg, ws, &pre);
  TransformerLM fa = stage_cda(cfg, ws, f0, &cda);
  return {std::move(f0), std::move(fa), std::move(pre), std::move(cda)};
}

HeadEffectMatrix stage_cma(const ExperimentConfig& cfg, const Workspace& ws,
                           const TransformerLM& model, const std::string& provenance) {
  return run_cma(model, ws.interventions, cfg.cma.mode, provenance);
}

Dataset make_task(const ExperimentConfig& cfg, const Lexicon& lex, std::uint64_t seed) {
  TaskSpec ts;
  ts.size = cfg.task.size;
  ts.female_proportion = cfg.task.female_proportion;
  ts.label_bias = cfg.task.label_bias;
  ts.kind = cfg.task.kind;
  ts.seed = stage_seed(seed, "task");
  return gen_task(ts, lex);
}

TransformerLM with_classifier(const TransformerLM& model, const Dataset& data, std::uint64_t seed) {
  TransformerLM m = model;
  m.attach_classifier(data.num_classes, stage_seed(seed, "classifier"));
  return m;
}

ImportanceRun stage_importance(const ExperimentConfig& cfg, const Workspace& ws,
                               const TransformerLM& fa, const Dataset& data, std::uint64_t seed) {
  ImportanceRun r{with_classifier(fa, data, seed), {}, {}, {}};
  TrainConfig t = cfg.converge;
  t.seed = stage_seed(seed, "converge");
  r.converge_run = finetune(r.converged, ws.vocab, data, t, RegularizerSpec{});
  NoiseState init = init_noise(r.converged, cfg.lambda_for(data.examples.size()));
  r.estimate = estimate(r.converged, ws.vocab, data, std::move(init),
                        cfg.noise_config(stage_seed(seed, "estimate")));
  r.importance = head_importance(r.estimate.noise, r.converged);
  return r;
}

RegularizerSpec make_regularizer(const ExperimentConfig& cfg, RegKind kind, double gamma,
                                 const TransformerLM& fa, const HeadMask& mask,
                                 const ImportanceMatrix& importance, std::uint64_t seed) {
  RegularizerSpec spec;
  spec.kind = kind;
  spec.gamma = gamma;
  if (kind == RegKind::none) return spec;
  spec.reference = std::make_shared<const ParamSnapshot>(snapshot_attention(fa));
  spec.mask = mask;
  spec.importance = importance.heads;
  spec.random_count = cfg.finetune.random_count ? cfg.finetune.random_count : mask.count();
  spec.random_seed = stage_seed(seed, "random_heads");
  return spec;
}

FinetuneRun stage_finetune(const Workspace& ws, const TransformerLM& start, const Dataset& data,
                           const RegularizerSpec& reg, const TrainConfig& train, std::uint64_t seed) {
  FinetuneRun r{with_classifier(start, data, seed), {}};
  TrainConfig t = train;
  t.seed = stage_seed(seed, "finetune");
  r.run = finetune(r.model, ws.vocab, data, t, reg);
  return r;
}

BiasReport evaluate(const ExperimentConfig& cfg, const Workspace& ws, const TransformerLM& model,
                    ModelCategory category, std::uint64_t seed, ParallelPredictions* predictions) {
  BiasReport r;
  r.category = category;
  r.seed = seed;
  const auto probs = probe_probabilities(model, ws.vocab, ws.probes);
  r.stereoset = stereoset_score(probs);
  r.lm = lm_score(probs);
  if (model.weights().has_cls) {
    const auto pairs =
        gen_extrinsic_eval(ws.lex, cfg.task.kind, cfg.eval.extrinsic_pairs, stage_seed(seed, "extrinsic"));
    ParallelPredictions p = predict_parallel(model, ws.vocab, pairs);
    r.extrinsic[extrinsic_metric_name(cfg.task.kind)] = extrinsic_bias(cfg.task.kind, p);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      correct += (p.male_pred[i] == p.labels[i]) + (p.female_pred[i] == p.labels[i]);
    }
    r.accuracy = p.labels.empty() ? 0.0 : static_cast<double>(correct) / (2.0 * p.labels.size());
    if (predictions) *predictions = std::move(p);
  }
  return r;
}

json report_to_json(const BiasReport& r) {
  return {{"category", to_string(r.category)}, {"seed", r.seed},
          {"stereoset", r.stereoset},          {"lm_score", r.lm},
          {"extrinsic", r.extrinsic},          {"accuracy", r.accuracy}};
}

// ---- pipeline ---------------------------------------------------------------------------

PipelineResult run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  RunManifest man;
  RunArtifacts pre_run, cda_run;
  std::vector<BiasReport> reports;
  man.command = "pipeline";
  man.tool_version = kToolVersion;
  man.config = config_to_json(cfg);
  man.seed = seed;
  auto out = [&](const std::string& f) { return out_dir + "/" + f; };

  const Workspace ws(cfg);
  const Corpus pre_corpus = pretrain_corpus(cfg, ws);
  const Corpus cda = cda_corpus(cfg, ws);
  const Dataset task = make_task(cfg, ws.lex, seed);
  man.inputs["pretrain_corpus"] = hex64(corpus_hash(pre_corpus));
  man.inputs["cda_corpus"] = hex64(corpus_hash(cda));
  timed_stage("data", &man, [&] {
    write_corpus(out("pretrain_corpus.txt"), pre_corpus);
    write_corpus(out("cda_corpus.txt"), cda);
    write_dataset_csv(out("task.csv"), task);
  });
  man.inputs["task"] = hex64(file_hash(out("task.csv")));

  TransformerLM f0 = timed_stage("pretrain", &man, [&] {
    TransformerLM m = stage_pretrain(cfg, ws, &pre_run);
    save_checkpoint(out("f0.ckpt"), model_checkpoint(m));
    return m;
  });

  HeadEffectMatrix b0 = timed_stage("cma_pretrained", &man, [&] {
    HeadEffectMatrix e = stage_cma(cfg, ws, f0, "B0: pretrained");
    write_head_matrix_csv(out("b0.csv"), e.effects, "effect", e.provenance);
    return e;
  });

  TransformerLM fa = timed_stage("cda", &man, [&] {
    TransformerLM m = stage_cda(cfg, ws, f0, &cda_run);
    save_checkpoint(out("fA.ckpt"), model_checkpoint(m));
    return m;
  });

  HeadEffectMatrix ba = timed_stage("cma_debiased", &man, [&] {
    HeadEffectMatrix e = stage_cma(cfg, ws, fa, "Ba: debiased");
    write_head_matrix_csv(out("ba.csv"), e.effects, "effect", e.provenance);
    return e;
  });
  const HeadMask mask = debiased_mask(b0.effects, ba.effects, cfg.cma.mask);

  {
    Checkpoint c;
    c.meta["kind"] = "theta_cda";
    for (auto& [name, t] : snapshot_attention(fa)) c.tensors.emplace_back(name, t);
    save_checkpoint(out("theta_cda.ckpt"), c);
  }

  ImportanceRun imp = timed_stage("estimate", &man, [&] { return stage_importance(cfg, ws, fa, task, seed); });
  {
    Checkpoint c;
    c.meta["kind"] = "importance";
    put_noise(c, imp.estimate.noise);
    put_importance(c, imp.importance);
    save_checkpoint(out("importance.ckpt"), c);
    write_head_matrix_csv(out("importance.csv"), imp.importance.heads, "importance",
                          "a^G: generalization importance");
  }
  for (const auto& w : imp.converge_run.warnings) man.warnings.push_back("converge: " + w);
  for (const auto& w : imp.estimate.warnings) man.warnings.push_back("estimate: " + w);

  const RegularizerSpec reg = make_regularizer(cfg, cfg.finetune.regularizer, cfg.finetune.gamma,
                                               fa, mask, imp.importance, seed);
  FinetuneRun tuned = timed_stage("finetune", &man, [&] {
    FinetuneRun r = stage_finetune(ws, fa, task, reg, cfg.finetune.train, seed);
    save_checkpoint(out("fT.ckpt"), model_checkpoint(r.model));
    return r;
  });
  for (const auto& w : tuned.run.warnings) man.warnings.push_back("finetune: " + w);

  HeadEffectMatrix bt = timed_stage("cma_tuned", &man, [&] {
    HeadEffectMatrix e = stage_cma(cfg, ws, tuned.model, "Bt: tuned");
    write_head_matrix_csv(out("bt.csv"), e.effects, "effect", e.provenance);
    return e;
  });

  ParallelPredictions preds;
  timed_stage("eval", &man, [&] {
    reports.push_back(evaluate(cfg, ws, f0, ModelCategory::pretrained, seed));
    reports.push_back(evaluate(cfg, ws, fa, ModelCategory::debiased, seed));
    reports.push_back(evaluate(cfg, ws, tuned.model, ModelCategory::debiased_fine_tuned, seed, &preds));
  });
  write_predictions_csv(out("predictions.csv"), preds);

  json report;
  report["seed"] = seed;
  report["models"] = json::array();
  for (const auto& r : reports) report["models"].push_back(report_to_json(r));
  report["eligible_mask"] = mask_json(mask);
  report["eligible_heads"] = mask.count();
  report["regularizer"] = to_string(reg.kind);
  report["gamma"] = reg.gamma;
  report["final_regularizer"] = reg.kind == RegKind::none ? 0.0 : regularizer_value(tuned.model, reg);
  report["finetune_epoch_losses"] = tuned.run.epoch_losses;
  report["finetune_epoch_regularizer"] = tuned.run.epoch_regularizer;
  report["finetune_best_epoch"] = tuned.run.best_epoch;
  report["pretrain_epoch_losses"] = pre_run.epoch_losses;
  report["cda_epoch_losses"] = cda_run.epoch_losses;
  report["estimate_objective"] = imp.estimate.epoch_objective;
  report["estimate_kl"] = imp.estimate.final_kl;
  report["pac_bayes_bound"] = pac_bayes_bound(imp.estimate.final_train_loss,
                                              imp.estimate.final_kl, task.examples.size());
  report["lambda"] = imp.estimate.noise.lambda;
  report["cma_mode"] = to_string(cfg.cma.mode);
  report["mask_mode"] = to_string(cfg.cma.mask);
  write_file(out("report.json"), report.dump(2) + "\n");

  for (const char* f : {"pretrain_corpus.txt", "cda_corpus.txt", "task.csv", "f0.ckpt", "b0.csv", "fA.ckpt",
                        "ba.csv", "theta_cda.ckpt", "importance.ckpt", "importance.csv", "fT.ckpt", "bt.csv",
                        "predictions.csv", "report.json"}) {
    man.record_output(out_dir, f);
  }
  man.extra["fT_checksum"] = hex64(tuned.model.checksum());
  man.extra["eligible_heads"] = mask.count();
  save_manifest(out("manifest.json"), man);
  return PipelineResult{BaseModels{std::move(f0), std::move(fa), std::move(pre_run), std::move(cda_run)},
                        std::move(b0), std::move(ba), std::move(bt), mask, std::move(imp), std::move(tuned),
                        std::move(reports), std::move(man)};
}

// ---- pool ---------------------------------------------------------------------------------

std::size_t worker_count(bool deterministic) {
  if (deterministic) return 1;
  if (const char* env = std::getenv("PSTN_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("PSTN_WORKERS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void run_pool(std::size_t jobs, std::size_t workers, const std::function<void(std::size_t)>& job) {
  if (workers < 1) throw ConfigError("worker pool needs at least one worker");
  workers = std::min(workers, std::max<std::size_t>(jobs, 1));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  auto body = [&] {
    // Kernels stay single-threaded inside a worker.
    omp_set_num_threads(1);
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs || failed.load()) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
        failed = true;
      }
    }
  };
  if (workers == 1) {
    const int saved = omp_get_max_threads();
    body();
    omp_set_num_threads(saved);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
}

// ---- sweep -------------------------------------------------------------------------------

namespace {

std::string cell_name(double rho, std::size_t m, std::uint64_t seed) {
  std::ostringstream ss;
  ss << "rho" << rho << "_m" << m << "_s" << seed;
  return ss.str();
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opts, const std::string& out_dir,
                      const BaseModels* base) {
  cfg.validate();
  if (opts.rho.empty() || opts.sizes.empty() || opts.seeds.empty()) {
    throw ConfigError("sweep needs non-empty rho, size and seed lists");
  }
  ensure_dir(out_dir);
  RunManifest man;
  man.command = "sweep";
  man.tool_version = kToolVersion;
  man.config = config_to_json(cfg);
  man.seed = cfg.base_seed;
  man.extra["rho"] = opts.rho;
  man.extra["sizes"] = opts.sizes;
  man.extra["seeds"] = opts.seeds;

  const Workspace ws(cfg);
  std::optional<BaseModels> owned;
  if (!base) {
    owned = timed_stage("base_models", &man, [&] { return build_base_models(cfg, ws); });
    base = &*owned;
  }
  const auto base_probs = std::make_pair(probe_probabilities(base->f0, ws.vocab, ws.probes),
                                         probe_probabilities(base->fa, ws.vocab, ws.probes));
  const double pre_ss = stereoset_score(base_probs.first), pre_lm = lm_score(base_probs.first);
  const double deb_ss = stereoset_score(base_probs.second), deb_lm = lm_score(base_probs.second);

  struct Cell {
    double rho;
    std::size_t m;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double rho : opts.rho)
    for (std::size_t m : opts.sizes)
      for (std::uint64_t s : opts.seeds) cells.push_back({rho, m, s});

  std::vector<std::array<SweepRow, 4>> slots(cells.size());
  TrainConfig train = cfg.finetune.train;
  train.epochs = cfg.sweep.epochs;
  timed_stage("cells", &man, [&] {
    run_pool(cells.size(), opts.workers, [&](std::size_t i) {
      const Cell& c = cells[i];
      ExperimentConfig local = cfg;
      local.task.female_proportion = c.rho;
      local.task.size = c.m;
      const Dataset data = make_task(local, ws.lex, c.seed);
      const FinetuneRun ft = stage_finetune(ws, base->f0, data, RegularizerSpec{}, train, c.seed);
      const FinetuneRun dft = stage_finetune(ws, base->fa, data, RegularizerSpec{}, train, c.seed);
      const auto p_ft = probe_probabilities(ft.model, ws.vocab, ws.probes);
      const auto p_dft = probe_probabilities(dft.model, ws.vocab, ws.probes);
      auto row = [&](ModelCategory cat, double ss, double lm) { return SweepRow{cat, c.rho, c.m, c.seed, ss, lm}; };
      slots[i] = {row(ModelCategory::pretrained, pre_ss, pre_lm), row(ModelCategory::debiased, deb_ss, deb_lm),
                  row(ModelCategory::fine_tuned, stereoset_score(p_ft), lm_score(p_ft)),
                  row(ModelCategory::debiased_fine_tuned, stereoset_score(p_dft), lm_score(p_dft))};
      const std::string dir = out_dir + "/cells/" + cell_name(c.rho, c.m, c.seed);
      ensure_dir(dir);
      write_figure1_csv(dir + "/scores.csv", std::vector<SweepRow>(slots[i].begin(), slots[i].end()));
    });
  });

  SweepResult res;
  for (const auto& s : slots) res.rows.insert(res.rows.end(), s.begin(), s.end());
  res.cells = aggregate(res.rows);
  write_figure1_csv(out_dir + "/figure1_analog.csv", res.rows);
  write_sweep_summary_csv(out_dir + "/sweep_summary.csv", res.cells);
  man.record_output(out_dir, "figure1_analog.csv");
  man.record_output(out_dir, "sweep_summary.csv");
  for (const auto& c : cells) man.record_output(out_dir, "cells/" + cell_name(c.rho, c.m, c.seed) + "/scores.csv");
  man.extra["workers"] = opts.workers;
  save_manifest(out_dir + "/manifest.json", man);
  return res;
}

// ---- replay ------------------------------------------------------------------------------

std::vector<std::string> replay(const std::string& manifest_path, const std::string& out_dir) {
  const RunManifest old = load_manifest(manifest_path);
  const ExperimentConfig cfg = config_from_json(old.config);
  if (old.command == "pipeline") {
    run_pipeline(cfg, old.seed, out_dir);
  } else if (old.command == "sweep") {
    SweepOptions o;
    o.rho = old.extra.at("rho").get<std::vector<double>>();
    o.sizes = old.extra.at("sizes").get<std::vector<std::size_t>>();
    o.seeds = old.extra.at("seeds").get<std::vector<std::uint64_t>>();
    o.workers = 1;
    run_sweep(cfg, o, out_dir);
  } else {
    throw ConfigError("cannot replay a '" + old.command + "' manifest");
  }
  const RunManifest fresh = load_manifest(out_dir + "/manifest.json");
  std::vector<std::string> diff;
  for (const auto& [file, hash] : old.outputs) {
    auto it = fresh.outputs.find(file);
    if (it == fresh.outputs.end() || it->second != hash) diff.push_back(file);
  }
  for (const auto& [file, hash] : fresh.outputs) {
    if (!old.outputs.count(file)) diff.push_back(file);
  }
  return diff;
}

// ---- method comparison --------------------------------------------------------------------

namespace {

RegKind method_kind(const std::string& m) {
  if (m == "vanilla" || m == "debiased") return RegKind::none;
  if (m == "prosocial") return RegKind::prosocial;
  if (m == "uniform") return RegKind::uniform;
  if (m == "random_heads") return RegKind::random_heads;
  throw ConfigError("unknown method '" + m + "'");
}

}  // namespace

double ComparisonResult::mean(const std::string& method, double MethodScore::*field) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& sc : scores) {
    if (sc.method != method) continue;
    s += sc.*field;
    ++n;
  }
  if (n == 0) throw std::out_of_range("no scores for method '" + method + "'");
  return s / static_cast<double>(n);
}

ComparisonResult compare_methods(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<std::string>& methods, const std::string& out_dir,
                                 const BaseModels* base) {
  cfg.validate();
  for (const auto& m : methods) method_kind(m);
  if (seeds.empty()) throw ConfigError("method comparison needs at least one seed");
  ensure_dir(out_dir);
  const Workspace ws(cfg);
  std::optional<BaseModels> owned;
  if (!base) {
    owned = build_base_models(cfg, ws);
    base = &*owned;
  }
  ComparisonResult res;
  res.pretrained_score = stereoset_score(base->f0, ws.vocab, ws.probes);
  res.debiased_score = stereoset_score(base->fa, ws.vocab, ws.probes);
  const HeadEffectMatrix b0 = stage_cma(cfg, ws, base->f0, "B0");
  const HeadEffectMatrix ba = stage_cma(cfg, ws, base->fa, "Ba");
  const HeadMask mask = debiased_mask(b0.effects, ba.effects, cfg.cma.mask);
  res.eligible_heads = mask.count();
  const ParamSnapshot ref = snapshot_attention(base->fa);

  for (std::uint64_t seed : seeds) {
    const Dataset data = make_task(cfg, ws.lex, seed);
    std::optional<ImportanceRun> imp;
    for (const auto& method : methods) {
      const RegKind kind = method_kind(method);
      if (kind == RegKind::prosocial && !imp) imp = stage_importance(cfg, ws, base->fa, data, seed);
      const ImportanceMatrix importance = imp ? imp->importance : ImportanceMatrix{};
      const RegularizerSpec reg =
          make_regularizer(cfg, kind, cfg.finetune.gamma, base->fa, mask, importance, seed);
      const TransformerLM& start = method == "vanilla" ? base->f0 : base->fa;
      const FinetuneRun run = stage_finetune(ws, start, data, reg, cfg.finetune.train, seed);
      const BiasReport r = evaluate(cfg, ws, run.model, ModelCategory::debiased_fine_tuned, seed);
      MethodScore s;
      s.method = method;
      s.seed = seed;
      s.stereoset = r.stereoset;
      s.lm = r.lm;
      s.extrinsic = r.extrinsic.begin()->second;
      s.accuracy = r.accuracy;
      s.eligible_distance = mean_eligible_distance(run.model, ref, mask);
      s.regularized_heads = kind == RegKind::none ? 0
                            : kind == RegKind::random_heads ? reg.random_count
                            : kind == RegKind::uniform      ? mask.layers * mask.heads
                                                            : mask.count();
      res.scores.push_back(s);
    }
  }
  for (const auto& method : methods) {
    if (method == "vanilla") continue;
    res.table3.push_back({method, to_string(cfg.task.kind), res.debiased_score,
                          res.mean(method, &MethodScore::stereoset)});
  }
  write_table3_csv(out_dir + "/table3_analog.csv", res.table3);
  {
    std::ostringstream ss;
    ss << "method,seed,stereoset,lm_score," << extrinsic_metric_name(cfg.task.kind)
       << ",accuracy,eligible_distance,regularized_heads\n";
    for (const auto& s : res.scores) {
      ss << s.method << ',' << s.seed << ',' << format_double(s.stereoset) << ',' << format_double(s.lm) << ','
         << format_double(s.extrinsic) << ',' << format_double(s.accuracy) << ','
         << format_double(s.eligible_distance) << ',' << s.regularized_heads << '\n';
    }
    write_file(out_dir + "/methods.csv", ss.str());
  }
  return res;
}

}  // namespace pstn
