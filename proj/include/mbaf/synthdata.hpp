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

// Bimodal regime task.
//
// A latent regime holds for regime_period consecutive steps, then a different
// regime is drawn. Each step also draws a signal index. The label is
// (regime + signal) mod classes. Mode 1 carries the regime as a noisy
// prototype, mode 2 the signal. With probability occlusion_prob mode 1 is
// replaced by noise of the same per-coordinate scale, so the regime of an
// occluded step can only be recovered from earlier steps.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mbaf/numcore.hpp"

namespace mbaf {

struct TaskConfig {
  std::size_t s1 = 8;
  std::size_t s2 = 8;
  std::size_t classes = 3;
  std::size_t regimes = 3;
  std::size_t regime_period = 8;
  double occlusion_prob = 0.5;
  double noise_sigma = 0.5;
  std::size_t length = 10000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Sample {
  DenseVector m1;
  DenseVector m2;
  std::size_t label = 0;
  std::size_t t = 0;
  // Generator bookkeeping, not visible to models.
  std::size_t regime = 0;
  std::size_t signal = 0;
  bool occluded = false;
};

using Dataset = std::vector<Sample>;

Dataset gen_dataset(const TaskConfig& config);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Contiguous, order-preserving split; the test set is the remainder.
Splits split(const Dataset& data, double train_frac, double val_frac);

// One row per sample: t,label,m1_0..m1_{s1-1},m2_0..m2_{s2-1}
std::string dataset_csv(const Dataset& data);

}  // namespace mbaf
