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

#include "mbaf/synthdata.hpp"

#include <cmath>
#include <sstream>

namespace mbaf {

void TaskConfig::validate() const {
  if (s1 == 0 || s2 == 0) throw ParamError("task: s1 and s2 must be >= 1");
  if (classes < 2) throw ParamError("task: classes must be >= 2");
  if (regimes < 1) throw ParamError("task: regimes must be >= 1");
  if (regime_period < 1) throw ParamError("task: regime_period must be >= 1");
  if (!(occlusion_prob >= 0.0 && occlusion_prob < 1.0)) {
    throw ParamError("task: occlusion_prob must be in [0, 1)");
  }
  if (!(noise_sigma > 0.0)) throw ParamError("task: noise_sigma must be > 0");
  if (length == 0) throw ParamError("task: length must be >= 1");
}

Dataset gen_dataset(const TaskConfig& config) {
  config.validate();
  Rng rng(config.seed);

  std::vector<DenseVector> regime_protos, signal_protos;
  for (std::size_t r = 0; r < config.regimes; ++r) {
    regime_protos.push_back(rng_normal(rng, config.s1, 0.0, 1.0));
  }
  for (std::size_t c = 0; c < config.classes; ++c) {
    signal_protos.push_back(rng_normal(rng, config.s2, 0.0, 1.0));
  }
  // Clean mode-1 coordinates are N(0,1) prototype + N(0, sigma^2) noise.
  const double occluded_sigma = std::sqrt(1.0 + config.noise_sigma * config.noise_sigma);

  Dataset data;
  data.reserve(config.length);
  std::size_t regime = rng.below(config.regimes);
  for (std::size_t t = 0; t < config.length; ++t) {
    if (t > 0 && t % config.regime_period == 0 && config.regimes > 1) {
      // Switch to a different regime.
      regime = (regime + 1 + rng.below(config.regimes - 1)) % config.regimes;
    }
    Sample s;
    s.t = t;
    s.regime = regime;
    s.signal = rng.below(config.classes);
    s.label = (regime + s.signal) % config.classes;
    s.occluded = rng.uniform() < config.occlusion_prob;

    if (s.occluded) {
      s.m1 = rng_normal(rng, config.s1, 0.0, occluded_sigma);
    } else {
      s.m1 = rng_normal(rng, config.s1, 0.0, config.noise_sigma);
      axpy(1.0, regime_protos[regime], s.m1.span());
    }
    s.m2 = rng_normal(rng, config.s2, 0.0, config.noise_sigma);
    axpy(1.0, signal_protos[s.signal], s.m2.span());
    data.push_back(std::move(s));
  }
  return data;
}

Splits split(const Dataset& data, double train_frac, double val_frac) {
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(train_frac + val_frac < 1.0)) {
    throw ParamError("split: need positive fractions summing to < 1");
  }
  const double n = static_cast<double>(data.size());
  const auto n_train = static_cast<std::size_t>(std::floor(n * train_frac + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * val_frac + 1e-9));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= data.size()) {
    throw ParamError("split: " + std::to_string(data.size()) +
                     " samples leave an empty partition");
  }
  Splits s;
  s.train.assign(data.begin(), data.begin() + n_train);
  s.val.assign(data.begin() + n_train, data.begin() + n_train + n_val);
  s.test.assign(data.begin() + n_train + n_val, data.end());
  return s;
}

std::string dataset_csv(const Dataset& data) {
  std::ostringstream out;
  out.precision(17);
  out << "t,label";
  if (!data.empty()) {
    for (std::size_t i = 0; i < data.front().m1.size(); ++i) out << ",m1_" << i;
    for (std::size_t i = 0; i < data.front().m2.size(); ++i) out << ",m2_" << i;
  }
  out << '\n';
  for (const auto& s : data) {
    out << s.t << ',' << s.label;
    for (double v : s.m1) out << ',' << v;
    for (double v : s.m2) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace mbaf
