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

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mbaf/experiment.hpp"

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> slots;
  std::optional<std::string> variant;
  bool freeze_writes = false;
  std::optional<std::string> out;

  mbaf::Overrides overrides() const { return {seed, slots, variant, freeze_writes, out}; }
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config")->required();
  cmd->add_option("--seed", f.seed, "Run seed (replaces the config's seed list)");
  cmd->add_option("--slots", f.slots, "Memory slot count k (replaces the slot sweep)");
  cmd->add_option("--variant", f.variant, "nf | na | ca | single:1 | single:2 | resampled:D");
  cmd->add_flag("--freeze-writes", f.freeze_writes, "Disable memory writes during evaluation");
  cmd->add_option("--out", f.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-based attentive fusion: training, ablations and gradient checks"};
  app.require_subcommand(1);

  RunFlags train_flags, eval_flags, ablate_flags, data_flags;
  std::string checkpoint;
  auto* train = app.add_subcommand("train", "Train one classifier and write its reports");
  add_run_flags(train, train_flags);
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the val/test splits");
  add_run_flags(evaluate, eval_flags);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file (default <out>/checkpoint.bin)");
  auto* ablate = app.add_subcommand("ablate", "Run the variant x slots x seeds sweep");
  add_run_flags(ablate, ablate_flags);
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as CSV");
  add_run_flags(gen, data_flags);

  mbaf::GradcheckOptions gc;
  bool no_classifier = false;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every fusion variant");
  grad->add_option("--s1", gc.s1, "Mode 1 width");
  grad->add_option("--s2", gc.s2, "Mode 2 width");
  grad->add_option("--slots", gc.slots, "Memory slots k");
  grad->add_option("--batch", gc.batch, "Batch size");
  grad->add_option("--seeds", gc.seeds, "Independent checks per variant");
  grad->add_option("--resample-dim", gc.resample_dim, "d_out for the resampled variant");
  grad->add_option("--variant", gc.variant, "Check only this variant");
  grad->add_flag("--no-classifier", no_classifier, "Skip the end-to-end classifier checks");
  grad->add_option("--out", gc.out, "Also write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mbaf::kExitOk : mbaf::kExitUsage;
  }

  if (*train) return mbaf::cmd_train(train_flags.config, train_flags.overrides(), std::cout, std::cerr);
  if (*evaluate) {
    return mbaf::cmd_evaluate(eval_flags.config, checkpoint, eval_flags.overrides(), std::cout,
                              std::cerr);
  }
  if (*ablate) return mbaf::cmd_ablate(ablate_flags.config, ablate_flags.overrides(), std::cout, std::cerr);
  if (*gen) return mbaf::cmd_gen_data(data_flags.config, data_flags.overrides(), std::cout, std::cerr);
  gc.classifier = !no_classifier;
  return mbaf::cmd_gradcheck(gc, std::cout, std::cerr);
}
