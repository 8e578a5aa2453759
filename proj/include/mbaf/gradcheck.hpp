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

// Central finite-difference checks of the analytic backward passes.
//
// check_layer and check_classifier re-evaluate the loss in long double with
// the three-point rule at step h. Coordinates that disagree with the analytic
// gradient are re-estimated in quad precision from steps h and h/2,
//   D = D(h/2) + (D(h/2) - D(h)) / 3,
// which cancels the O(h^2) truncation term. central_diff is the plain
// double-precision three-point rule.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbaf/fusion.hpp"
#include "mbaf/numcore.hpp"

namespace mbaf {

using ScalarFn = std::function<double(std::span<const double>)>;

// [L(theta + h e_i) - L(theta - h e_i)] / 2h for every i.
DenseVector central_diff(const ScalarFn& loss, const DenseVector& theta, double h);

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

struct BlockError {
  std::string name;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t count = 0;
};

struct GradReport {
  std::string variant;
  std::uint64_t seed = 0;
  double threshold = 1e-5;
  std::vector<BlockError> blocks;
  std::size_t resamples = 0;
  // Coordinates re-estimated in quad precision.
  std::size_t refined = 0;
  bool pass = true;

  double max_rel_error() const;
  const BlockError* worst_block() const;
};

nlohmann::ordered_json to_json(const GradReport& report);

// Size caps keep the O(parameters) finite-difference sweep cheap.
inline constexpr std::size_t kMaxCheckDim = 16;
inline constexpr std::size_t kMaxCheckSlots = 8;
inline constexpr std::size_t kMaxCheckBatch = 4;

struct LayerCheckConfig {
  std::size_t s1 = 3;
  std::size_t s2 = 3;
  std::size_t slots = 4;
  std::size_t batch = 3;
  FusionVariant variant = FusionVariant::naive_attention();
  double step = 1e-5;
  double threshold = 1e-5;
  // Smallest |c * w| allowed before the draw is rejected as too close to the
  // ReLU kink. A compose-weight perturbation of one step can move c * w by
  // several times the step, so the margin sits well above it.
  double kink_margin = 1e-4;
  bool zero_weights = false;

  void validate() const;
};

// Random layer, memory and inputs from seed; loss = sum of squared outputs.
// Compares mbaf_backward with central differences on every parameter block
// and on both input batches.
GradReport check_layer(const LayerCheckConfig& config, std::uint64_t seed);

struct ClassifierCheckConfig {
  std::size_t s1 = 3;
  std::size_t s2 = 3;
  std::size_t encoder_hidden = 3;
  std::size_t head_hidden = 5;
  std::size_t classes = 3;
  std::size_t slots = 4;
  std::size_t batch = 3;
  double dropout_rate = 0.5;
  FusionVariant variant = FusionVariant::naive_attention();
  double step = 1e-5;
  double threshold = 1e-5;
  // A bias perturbation moves a ReLU input by the full step, so the margin
  // here must exceed the step rather than sit below it.
  double kink_margin = 1e-4;
};

// End-to-end check of encoder -> fusion -> head -> cross-entropy.
GradReport check_classifier(const ClassifierCheckConfig& config, std::uint64_t seed);

}  // namespace mbaf
