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

#include "mbaf/metrics.hpp"

#include <numeric>
#include <sstream>

#include "mbaf/errors.hpp"

namespace mbaf {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion_matrix: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw ParamError("confusion_matrix: label out of range at index " + std::to_string(i));
    }
    ++cm(truth[i], predicted[i]);
  }
  return cm;
}

MetricsReport compute_report(const ConfusionMatrix& confusion) {
  const std::size_t k = confusion.classes();
  const std::uint64_t total = confusion.total();
  if (total == 0) throw ParamError("compute_report: confusion matrix is empty");

  MetricsReport r;
  r.confusion = confusion;
  r.per_class.resize(k);

  std::uint64_t correct = 0;
  double recall_sum = 0.0;
  std::size_t recall_classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += confusion(c, j);
      col += confusion(j, c);
    }
    const std::uint64_t hit = confusion(c, c);
    correct += hit;

    ClassScores& s = r.per_class[c];
    s.support = row;
    if (col > 0) {
      s.precision = static_cast<double>(hit) / static_cast<double>(col);
    } else {
      s.empty_prediction_column = true;
      r.warnings.push_back("class " + std::to_string(c) + " never predicted; precision set to 0");
    }
    if (row > 0) {
      s.recall = static_cast<double>(hit) / static_cast<double>(row);
      recall_sum += s.recall;
      ++recall_classes;
    } else {
      r.warnings.push_back("class " + std::to_string(c) + " has no true samples; excluded from UA");
    }
    const double denom = s.precision + s.recall;
    s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  }

  r.wa = static_cast<double>(correct) / static_cast<double>(total);
  r.ua = recall_classes > 0 ? recall_sum / static_cast<double>(recall_classes) : 0.0;

  // Support-weighted averages. Weighted recall reduces to trace / total; it is
  // computed that way so it equals WA exactly.
  double wp = 0.0, wf = 0.0;
  for (const auto& s : r.per_class) {
    const double w = static_cast<double>(s.support) / static_cast<double>(total);
    wp += w * s.precision;
    wf += w * s.f1;
  }
  r.weighted_avg.precision = wp;
  r.weighted_avg.recall = r.wa;
  r.weighted_avg.f1 = wf;
  r.weighted_avg.support = total;
  return r;
}

nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["wa"] = report.wa;
  j["ua"] = report.ua;
  const std::size_t k = report.confusion.classes();
  j["classes"] = k;
  j["total"] = report.confusion.total();
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < k; ++t) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < k; ++p) row.push_back(report.confusion(t, p));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  auto per = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& s = report.per_class[c];
    per.push_back({{"class", c},
                   {"precision", s.precision},
                   {"recall", s.recall},
                   {"f1", s.f1},
                   {"support", s.support}});
  }
  j["per_class"] = per;
  j["weighted_avg"] = {{"precision", report.weighted_avg.precision},
                       {"recall", report.weighted_avg.recall},
                       {"f1", report.weighted_avg.f1},
                       {"support", report.weighted_avg.support}};
  j["warnings"] = report.warnings;
  return j;
}

std::string confusion_csv(const ConfusionMatrix& confusion) {
  std::ostringstream out;
  const std::size_t k = confusion.classes();
  out << "true\\pred";
  for (std::size_t p = 0; p < k; ++p) out << ',' << p;
  out << '\n';
  for (std::size_t t = 0; t < k; ++t) {
    out << t;
    for (std::size_t p = 0; p < k; ++p) out << ',' << confusion(t, p);
    out << '\n';
  }
  return out.str();
}

}  // namespace mbaf
