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

// Experiment runner behind the `mbaf` command-line tool.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numeric
// error.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbaf/model.hpp"
#include "mbaf/synthdata.hpp"

namespace mbaf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
  TaskConfig task;
  ClassifierConfig classifier;
  FusionVariant variant = FusionVariant::naive_attention();
  double train_frac = 0.8;
  double val_frac = 0.1;
  std::vector<std::size_t> slots{10, 20, 30, 40, 50, 100};
  std::vector<std::uint64_t> seeds{1};
  std::vector<FusionVariant> ablation_variants;
  bool include_baseline = true;
  bool freeze_writes = false;
  std::string out = "runs/default";

  void validate() const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::ordered_json to_json(const ExperimentConfig& config);

// Command-line overrides applied on top of the file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> slots;
  std::optional<std::string> variant;
  bool freeze_writes = false;
  std::optional<std::string> out;
};
void apply_overrides(ExperimentConfig& config, const Overrides& overrides);

struct CurvePoint {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_wa = 0.0;
  double val_ua = 0.0;
};

struct RunResult {
  FusionVariant variant;
  std::size_t slots = 0;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> curves;
  EvalResult val;
  EvalResult test;
  TrainState state;
};

// Trains one classifier on splits.train, reporting val metrics per epoch.
// Test metrics use the memory carried through the validation stream.
RunResult run_single(const ExperimentConfig& config, const Splits& splits,
                     const FusionVariant& variant, std::size_t slots, std::uint64_t seed);

nlohmann::ordered_json run_metrics_json(const ExperimentConfig& config, const RunResult& run);
std::string curves_csv(const std::vector<CurvePoint>& curves);

// Variants swept by `ablate` when the config names none: naive and cross
// attention, single-mode memory on each mode, and the resampled outputs.
std::vector<FusionVariant> default_ablation_variants();

nlohmann::ordered_json run_ablation(const ExperimentConfig& config);

// Subcommands. Diagnostics go to err; a short summary to out.
int cmd_train(const std::string& config_path, const Overrides& overrides, std::ostream& out,
              std::ostream& err);
int cmd_evaluate(const std::string& config_path, const std::string& checkpoint_path,
                 const Overrides& overrides, std::ostream& out, std::ostream& err);
int cmd_ablate(const std::string& config_path, const Overrides& overrides, std::ostream& out,
               std::ostream& err);
int cmd_gen_data(const std::string& config_path, const Overrides& overrides, std::ostream& out,
                 std::ostream& err);

struct GradcheckOptions {
  std::size_t s1 = 4;
  std::size_t s2 = 4;
  std::size_t slots = 4;
  std::size_t batch = 3;
  std::size_t seeds = 10;
  std::size_t resample_dim = 5;
  std::optional<std::string> variant;  // default: every variant
  bool classifier = true;              // also run end-to-end checks
  std::optional<std::string> out;      // JSON file, in addition to stdout
};
int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err);

}  // namespace mbaf
