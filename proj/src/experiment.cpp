// Copyright 2026 The MBAF Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mbaf/experiment.hpp"

#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <omp.h>

#include "mbaf/gradcheck.hpp"

namespace mbaf {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << text;
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

// Maps exceptions onto exit codes.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParamError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

ExperimentConfig prepare(const std::string& path, const Overrides& overrides) {
  ExperimentConfig config = load_config(path);
  apply_overrides(config, overrides);
  config.validate();
  return config;
}

Splits make_splits(const ExperimentConfig& config) {
  return split(gen_dataset(config.task), config.train_frac, config.val_frac);
}

ojson fusion_param_json(const ExperimentConfig& config, const ClassifierParams& params) {
  const FusionLayer& f = params.fusion;
  ojson j;
  j["actual"] = f.variant.has_memory() ? param_count_actual(f.unit) + f.projection.size() : 0;
  j["formula"] = f.variant.has_memory()
                     ? param_count_formula(f.s1, f.s2, config.classifier.batch)
                     : 0;
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  task.validate();
  classifier.validate();
  if (classifier.classes != task.classes) {
    throw ConfigError("classifier classes must equal task classes");
  }
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (slots.empty()) throw ConfigError("slots sweep must be nonempty");
  for (std::size_t k : slots) {
    if (k == 0) throw ConfigError("slot counts must be >= 1");
  }
  if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0)) {
    throw ConfigError("split fractions must be positive and sum to < 1");
  }
  if (classifier.epochs == 0) throw ConfigError("classifier.epochs must be >= 1");
  if (out.empty()) throw ConfigError("out must be a nonempty path");
}

ExperimentConfig parse_config(const nlohmann::json& j) {
  reject_unknown(j,
                 {"task", "classifier", "variant", "split", "slots", "seeds",
                  "ablation_variants", "include_baseline", "freeze_writes", "out", "$schema"},
                 "config");
  ExperimentConfig c;
  if (j.contains("task")) {
    const auto& t = j.at("task");
    reject_unknown(t,
                   {"s1", "s2", "classes", "regimes", "regime_period", "occlusion_prob",
                    "noise_sigma", "length", "seed"},
                   "task");
    read_field(t, "s1", c.task.s1, "task");
    read_field(t, "s2", c.task.s2, "task");
    read_field(t, "classes", c.task.classes, "task");
    read_field(t, "regimes", c.task.regimes, "task");
    read_field(t, "regime_period", c.task.regime_period, "task");
    read_field(t, "occlusion_prob", c.task.occlusion_prob, "task");
    read_field(t, "noise_sigma", c.task.noise_sigma, "task");
    read_field(t, "length", c.task.length, "task");
    read_field(t, "seed", c.task.seed, "task");
  }
  if (j.contains("classifier")) {
    const auto& m = j.at("classifier");
    reject_unknown(m,
                   {"encoder_hidden", "head_hidden", "dropout_rate", "slots", "lr", "batch",
                    "epochs", "reinit_memory_per_epoch"},
                   "classifier");
    read_field(m, "encoder_hidden", c.classifier.encoder_hidden, "classifier");
    read_field(m, "head_hidden", c.classifier.head_hidden, "classifier");
    read_field(m, "dropout_rate", c.classifier.dropout_rate, "classifier");
    read_field(m, "slots", c.classifier.slots, "classifier");
    read_field(m, "lr", c.classifier.lr, "classifier");
    read_field(m, "batch", c.classifier.batch, "classifier");
    read_field(m, "epochs", c.classifier.epochs, "classifier");
    read_field(m, "reinit_memory_per_epoch", c.classifier.reinit_memory_per_epoch, "classifier");
  }
  c.classifier.classes = c.task.classes;
  if (j.contains("variant")) {
    std::string v;
    read_field(j, "variant", v, "config");
    c.variant = parse_variant(v);
  }
  c.classifier.fusion = c.variant;
  if (j.contains("split")) {
    const auto& s = j.at("split");
    reject_unknown(s, {"train", "val"}, "split");
    read_field(s, "train", c.train_frac, "split");
    read_field(s, "val", c.val_frac, "split");
  }
  read_field(j, "slots", c.slots, "config");
  read_field(j, "seeds", c.seeds, "config");
  if (j.contains("ablation_variants")) {
    std::vector<std::string> names;
    read_field(j, "ablation_variants", names, "config");
    for (const auto& n : names) c.ablation_variants.push_back(parse_variant(n));
  }
  read_field(j, "include_baseline", c.include_baseline, "config");
  read_field(j, "freeze_writes", c.freeze_writes, "config");
  read_field(j, "out", c.out, "config");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

ojson to_json(const ExperimentConfig& c) {
  ojson j;
  j["task"] = {{"s1", c.task.s1},
               {"s2", c.task.s2},
               {"classes", c.task.classes},
               {"regimes", c.task.regimes},
               {"regime_period", c.task.regime_period},
               {"occlusion_prob", c.task.occlusion_prob},
               {"noise_sigma", c.task.noise_sigma},
               {"length", c.task.length},
               {"seed", c.task.seed}};
  j["classifier"] = {{"encoder_hidden", c.classifier.encoder_hidden},
                     {"head_hidden", c.classifier.head_hidden},
                     {"dropout_rate", c.classifier.dropout_rate},
                     {"slots", c.classifier.slots},
                     {"lr", c.classifier.lr},
                     {"batch", c.classifier.batch},
                     {"epochs", c.classifier.epochs},
                     {"reinit_memory_per_epoch", c.classifier.reinit_memory_per_epoch}};
  j["variant"] = to_string(c.variant);
  j["split"] = {{"train", c.train_frac}, {"val", c.val_frac}};
  j["slots"] = c.slots;
  j["seeds"] = c.seeds;
  auto variants = ojson::array();
  for (const auto& v : c.ablation_variants) variants.push_back(to_string(v));
  j["ablation_variants"] = variants;
  j["include_baseline"] = c.include_baseline;
  j["freeze_writes"] = c.freeze_writes;
  j["out"] = c.out;
  return j;
}

void apply_overrides(ExperimentConfig& config, const Overrides& o) {
  if (o.seed) config.seeds = {*o.seed};
  if (o.slots) {
    config.classifier.slots = *o.slots;
    config.slots = {*o.slots};
  }
  if (o.variant) {
    config.variant = parse_variant(*o.variant);
    config.classifier.fusion = config.variant;
    config.ablation_variants = {config.variant};
  }
  if (o.freeze_writes) config.freeze_writes = true;
  if (o.out) config.out = *o.out;
}

RunResult run_single(const ExperimentConfig& config, const Splits& splits,
                     const FusionVariant& variant, std::size_t slots, std::uint64_t seed) {
  ClassifierConfig cc = config.classifier;
  cc.fusion = variant;
  cc.slots = slots;
  cc.seed = seed;

  RunResult run;
  run.variant = variant;
  run.slots = slots;
  run.seed = seed;
  run.state = make_train_state(cc, config.task.s1, config.task.s2);
  for (std::size_t epoch = 1; epoch <= cc.epochs; ++epoch) {
    EpochResult r = train_epoch(run.state, splits.train);
    EvalResult val = evaluate(run.state, splits.val, config.freeze_writes);
    run.curves.push_back({epoch, r.loss, val.report.wa, val.report.ua});
  }
  run.val = evaluate(run.state, splits.val, config.freeze_writes);
  run.test = evaluate(run.state.params, run.val.memory, cc.classes, cc.batch, splits.test,
                      config.freeze_writes);
  return run;
}

ojson run_metrics_json(const ExperimentConfig& config, const RunResult& run) {
  ojson j;
  j["variant"] = to_string(run.variant);
  j["slots"] = run.variant.has_memory() ? run.slots : 0;
  j["seed"] = run.seed;
  j["epochs"] = run.curves.size();
  j["train_loss"] = run.curves.empty() ? 0.0 : run.curves.back().train_loss;
  j["freeze_writes"] = config.freeze_writes;
  j["fusion_params"] = fusion_param_json(config, run.state.params);
  j["val"] = to_json(run.val.report);
  j["test"] = to_json(run.test.report);
  return j;
}

std::string curves_csv(const std::vector<CurvePoint>& curves) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,val_WA,val_UA\n";
  for (const auto& c : curves) {
    out << c.epoch << ',' << c.train_loss << ',' << c.val_wa << ',' << c.val_ua << '\n';
  }
  return out.str();
}

std::vector<FusionVariant> default_ablation_variants() {
  std::vector<FusionVariant> v{FusionVariant::naive_attention(), FusionVariant::cross_attention(),
                               FusionVariant::single_mode(1), FusionVariant::single_mode(2)};
  for (std::size_t d : {512, 1024, 2048, 4096, 8192}) v.push_back(FusionVariant::resampled(d));
  return v;
}

ojson run_ablation(const ExperimentConfig& config) {
  const Splits splits = make_splits(config);
  const std::vector<FusionVariant> variants =
      config.ablation_variants.empty() ? default_ablation_variants() : config.ablation_variants;

  struct Job {
    FusionVariant variant;
    std::size_t slots;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : variants)
    for (std::size_t k : config.slots)
      for (std::uint64_t s : config.seeds) jobs.push_back({v, k, s});
  const std::size_t n_rows = jobs.size();
  if (config.include_baseline) {
    for (std::uint64_t s : config.seeds) jobs.push_back({FusionVariant::naive(), 0, s});
  }

  std::vector<ojson> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(jobs.size()); ++i) {
    try {
      const Job& job = jobs[i];
      RunResult run = run_single(config, splits, job.variant, job.slots, job.seed);
      ojson row;
      row["variant"] = to_string(job.variant);
      row["slots"] = job.slots;
      row["seed"] = job.seed;
      row["train_loss"] = run.curves.back().train_loss;
      row["val_wa"] = run.val.report.wa;
      row["val_ua"] = run.val.report.ua;
      row["test_wa"] = run.test.report.wa;
      row["test_ua"] = run.test.report.ua;
      results[i] = std::move(row);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ojson table;
  table["config"] = to_json(config);
  auto rows = ojson::array();
  for (std::size_t i = 0; i < n_rows; ++i) rows.push_back(results[i]);
  auto baseline = ojson::array();
  for (std::size_t i = n_rows; i < jobs.size(); ++i) baseline.push_back(results[i]);

  // Mean over seeds per (variant, slots), in sweep order.
  auto summary = ojson::array();
  for (std::size_t i = 0; i < n_rows; i += config.seeds.size()) {
    double wa = 0.0, ua = 0.0;
    for (std::size_t s = 0; s < config.seeds.size(); ++s) {
      wa += results[i + s]["test_wa"].get<double>();
      ua += results[i + s]["test_ua"].get<double>();
    }
    const double n = static_cast<double>(config.seeds.size());
    summary.push_back({{"variant", results[i]["variant"]},
                       {"slots", results[i]["slots"]},
                       {"mean_test_wa", wa / n},
                       {"mean_test_ua", ua / n}});
  }
  if (!baseline.empty()) {
    double wa = 0.0, ua = 0.0;
    for (const auto& b : baseline) {
      wa += b["test_wa"].get<double>();
      ua += b["test_ua"].get<double>();
    }
    const double n = static_cast<double>(baseline.size());
    summary.push_back(
        {{"variant", "nf"}, {"slots", 0}, {"mean_test_wa", wa / n}, {"mean_test_ua", ua / n}});
  }
  table["rows"] = rows;
  table["baseline"] = baseline;
  table["summary"] = summary;
  return table;
}

int cmd_train(const std::string& config_path, const Overrides& overrides, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = prepare(config_path, overrides);
    const Splits splits = make_splits(config);
    RunResult run = run_single(config, splits, config.variant, config.classifier.slots,
                               config.seeds.front());
    const fs::path dir(config.out);
    fs::create_directories(dir);
    write_text(dir / "metrics.json", dump(run_metrics_json(config, run)));
    write_text(dir / "curves.csv", curves_csv(run.curves));
    write_text(dir / "confusion.csv", confusion_csv(run.test.report.confusion));
    save_checkpoint((dir / "checkpoint.bin").string(), snapshot(run.state));
    out << "trained " << to_string(run.variant) << " seed " << run.seed << ": test WA "
        << run.test.report.wa << ", UA " << run.test.report.ua << " -> " << dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint_path,
                 const Overrides& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig config = prepare(config_path, overrides);
    const Splits splits = make_splits(config);
    ClassifierConfig cc = config.classifier;
    cc.seed = config.seeds.front();
    TrainState state = make_train_state(cc, config.task.s1, config.task.s2);
    const std::string ckpt =
        checkpoint_path.empty() ? (fs::path(config.out) / "checkpoint.bin").string()
                                : checkpoint_path;
    restore(state, load_checkpoint(ckpt));

    RunResult run;
    run.variant = cc.fusion;
    run.slots = cc.slots;
    run.seed = cc.seed;
    run.val = evaluate(state, splits.val, config.freeze_writes);
    run.test = evaluate(state.params, run.val.memory, cc.classes, cc.batch, splits.test,
                        config.freeze_writes);
    run.state = std::move(state);

    const fs::path dir = fs::path(config.out) / "eval";
    fs::create_directories(dir);
    write_text(dir / "metrics.json", dump(run_metrics_json(config, run)));
    write_text(dir / "confusion.csv", confusion_csv(run.test.report.confusion));
    out << "evaluated " << ckpt << ": test WA " << run.test.report.wa << ", UA "
        << run.test.report.ua << " -> " << dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_ablate(const std::string& config_path, const Overrides& overrides, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = prepare(config_path, overrides);
    const ojson table = run_ablation(config);
    const fs::path dir(config.out);
    fs::create_directories(dir);
    write_text(dir / "ablation.json", dump(table));
    out << "ablation: " << table["rows"].size() << " rows, " << table["baseline"].size()
        << " baseline runs -> " << (dir / "ablation.json").string() << "\n";
    return kExitOk;
  });
}

int cmd_gen_data(const std::string& config_path, const Overrides& overrides, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = prepare(config_path, overrides);
    const Dataset data = gen_dataset(config.task);
    const fs::path dir(config.out);
    fs::create_directories(dir);
    write_text(dir / "dataset.csv", dataset_csv(data));
    out << "wrote " << data.size() << " samples -> " << (dir / "dataset.csv").string() << "\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    std::vector<FusionVariant> variants;
    if (options.variant) {
      variants.push_back(parse_variant(*options.variant));
    } else {
      variants = {FusionVariant::naive(), FusionVariant::naive_attention(),
                  FusionVariant::cross_attention(), FusionVariant::single_mode(1),
                  FusionVariant::single_mode(2), FusionVariant::resampled(options.resample_dim)};
    }
    if (options.seeds == 0) throw ConfigError("--seeds must be >= 1");

    struct Job {
      LayerCheckConfig config;
      std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& v : variants) {
      LayerCheckConfig c;
      c.s1 = options.s1;
      c.s2 = options.s2;
      c.slots = options.slots;
      c.batch = options.batch;
      c.variant = v;
      c.validate();
      for (std::size_t s = 1; s <= options.seeds; ++s) jobs.push_back({c, s});
    }

    std::vector<GradReport> reports(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(jobs.size()); ++i) {
      try {
        reports[i] = check_layer(jobs[i].config, jobs[i].seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    if (options.classifier) {
      for (const auto& v : variants) {
        ClassifierCheckConfig cc;
        cc.s1 = options.s1;
        cc.s2 = options.s2;
        cc.encoder_hidden = std::max<std::size_t>(options.s1, options.s2);
        cc.slots = options.slots;
        cc.batch = options.batch;
        cc.variant = v;
        for (std::size_t s = 1; s <= options.seeds; ++s) reports.push_back(check_classifier(cc, s));
      }
    }

    ojson j;
    bool pass = true;
    double worst = 0.0;
    auto per_variant = ojson::array();
    auto failures = ojson::array();
    std::map<std::string, std::pair<double, const GradReport*>> by_variant;
    std::vector<std::string> order;
    for (const auto& r : reports) {
      pass = pass && r.pass;
      worst = std::max(worst, r.max_rel_error());
      if (!r.pass) failures.push_back(to_json(r));
      auto [it, fresh] = by_variant.try_emplace(r.variant, 0.0, &r);
      if (fresh) order.push_back(r.variant);
      if (r.max_rel_error() >= it->second.first) it->second = {r.max_rel_error(), &r};
    }
    for (const auto& name : order) {
      const GradReport& r = *by_variant[name].second;
      std::size_t checks = 0, refined = 0;
      bool variant_pass = true;
      for (const auto& x : reports) {
        if (x.variant == name) {
          ++checks;
          refined += x.refined;
          variant_pass = variant_pass && x.pass;
        }
      }
      per_variant.push_back({{"variant", name},
                             {"checks", checks},
                             {"pass", variant_pass},
                             {"refined", refined},
                             {"max_rel_error", r.max_rel_error()},
                             {"worst", to_json(r)}});
    }
    j["pass"] = pass;
    j["threshold"] = reports.empty() ? 1e-5 : reports.front().threshold;
    j["checks"] = reports.size();
    j["max_rel_error"] = worst;
    j["dims"] = {{"s1", options.s1},
                 {"s2", options.s2},
                 {"slots", options.slots},
                 {"batch", options.batch},
                 {"seeds", options.seeds}};
    j["variants"] = per_variant;
    j["failures"] = failures;
    out << dump(j);
    if (options.out) write_text(*options.out, dump(j));
    if (!pass) {
      for (const auto& r : reports) {
        if (r.pass) continue;
        const BlockError* b = r.worst_block();
        err << "gradcheck FAILED: " << r.variant << " seed " << r.seed << " block " << b->name
            << "[" << b->worst_index << "] analytic " << b->worst_analytic << " numeric "
            << b->worst_numeric << " rel " << b->max_rel_error << "\n";
      }
      return kExitCheckFailed;
    }
    return kExitOk;
  });
}

}  // namespace mbaf
