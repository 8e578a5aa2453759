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

// Classification metrics.
//
// WA (weighted accuracy) is overall accuracy, trace / total. UA (unweighted
// accuracy) is the macro average of per-class recall over classes that have
// at least one true sample.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace mbaf {

// rows = true class, cols = predicted class
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes)
      : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const {
    return counts_[truth * classes_ + pred];
  }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) {
    return counts_[truth * classes_ + pred];
  }
  std::uint64_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted, std::size_t classes);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool empty_prediction_column = false;
};

struct MetricsReport {
  ConfusionMatrix confusion{0};
  double wa = 0.0;
  double ua = 0.0;
  std::vector<ClassScores> per_class;
  ClassScores weighted_avg;
  std::vector<std::string> warnings;
};

MetricsReport compute_report(const ConfusionMatrix& confusion);

nlohmann::ordered_json to_json(const MetricsReport& report);
std::string confusion_csv(const ConfusionMatrix& confusion);

}  // namespace mbaf
