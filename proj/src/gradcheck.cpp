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

#include "mbaf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "mbaf/model.hpp"
#include "precise_eval.hpp"

namespace mbaf {
namespace {

constexpr int kMaxAttempts = 200;

std::uint64_t attempt_seed(std::uint64_t seed, int attempt) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(attempt) * 0xBF58476D1CE4E5B9ULL;
}

double sum_of_squares(const std::vector<DenseVector>& outputs) {
  double total = 0.0;
  for (const auto& o : outputs)
    for (double v : o) total += v * v;
  return total;
}

BlockError compare(const std::string& name, std::span<const double> analytic,
                   std::span<const double> numeric) {
  BlockError e;
  e.name = name;
  e.count = analytic.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double r = relative_error(analytic[i], numeric[i]);
    sum += r;
    if (r > e.max_rel_error || i == 0) {
      e.max_rel_error = r;
      e.worst_index = i;
      e.worst_analytic = analytic[i];
      e.worst_numeric = numeric[i];
    }
  }
  e.mean_rel_error = analytic.empty() ? 0.0 : sum / static_cast<double>(analytic.size());
  return e;
}

// Two-tier finite differences. The first pass is the three-point rule on a
// long double copy of the loss. A coordinate whose estimate disagrees with the
// analytic value by more than kRefineFraction of the threshold is estimated
// again on a quad-precision copy, extrapolating steps h and h/2 to cancel the
// O(h^2) truncation term. Small gradient coordinates otherwise sit below the
// roundoff and truncation floor of the plain rule.
using Wide = long double;
using Quad = __float128;
constexpr double kRefineFraction = 0.1;

template <typename T>
T central(std::vector<T>& values, std::size_t i, const std::function<T()>& loss, T step) {
  const T saved = values[i];
  values[i] = saved + step;
  const T up = loss();
  values[i] = saved - step;
  const T down = loss();
  values[i] = saved;
  if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(down))) {
    throw NumericError("gradcheck: non-finite loss at coordinate " + std::to_string(i));
  }
  return (up - down) / (2 * step);
}

struct Probe {
  std::vector<Wide>* wide;
  std::function<Wide()> wide_loss;
  std::vector<Quad>* quad;
  std::function<Quad()> quad_loss;
};

DenseVector numeric_block(const Probe& probe, std::span<const double> analytic, double h,
                          double threshold, std::size_t& refined) {
  DenseVector numeric(analytic.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    numeric[i] = static_cast<double>(central<Wide>(*probe.wide, i, probe.wide_loss, h));
    if (relative_error(analytic[i], numeric[i]) < kRefineFraction * threshold) continue;
    const Quad coarse = central<Quad>(*probe.quad, i, probe.quad_loss, h);
    const Quad fine = central<Quad>(*probe.quad, i, probe.quad_loss, Quad(h) / 2);
    numeric[i] = static_cast<double>(fine + (fine - coarse) / 3);
    ++refined;
  }
  return numeric;
}

DenseVector flatten(const std::vector<DenseVector>& batch) {
  std::vector<double> flat;
  for (const auto& v : batch) flat.insert(flat.end(), v.begin(), v.end());
  return DenseVector(std::move(flat));
}

// Guards against the reference evaluation drifting from the forward pass.
template <typename T>
void require_agreement(double fast, T precise, const char* what) {
  const double p = static_cast<double>(precise);
  if (std::abs(fast - p) > 1e-10 * std::max(1.0, std::abs(p))) {
    throw NumericError(std::string(what) + ": reference loss " + std::to_string(p) +
                       " disagrees with forward loss " + std::to_string(fast));
  }
}

bool near_relu_kink(const FusionLayer& layer, const LayerTrace& trace, double margin) {
  if (!layer.variant.has_memory()) return false;
  for (const auto& s : trace.unit.steps) {
    for (std::size_t i = 0; i < s.c.size(); ++i) {
      if (std::abs(s.c[i] * layer.unit.w_scale[i]) < margin) return true;
    }
  }
  return false;
}

bool any_below(std::span<const double> v, double margin) {
  return std::any_of(v.begin(), v.end(), [&](double x) { return std::abs(x) < margin; });
}

void finish(GradReport& report) {
  report.pass = report.max_rel_error() < report.threshold;
}

}  // namespace

DenseVector central_diff(const ScalarFn& loss, const DenseVector& theta, double h) {
  if (!(h > 0.0)) throw ParamError("central_diff: step must be > 0");
  DenseVector work = theta;
  DenseVector grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    work[i] = theta[i] + h;
    const double up = loss(work.span());
    work[i] = theta[i] - h;
    const double down = loss(work.span());
    work[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("central_diff: non-finite loss at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

double GradReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& b : blocks) worst = std::max(worst, b.max_rel_error);
  return worst;
}

const BlockError* GradReport::worst_block() const {
  const BlockError* worst = nullptr;
  for (const auto& b : blocks) {
    if (!worst || b.max_rel_error > worst->max_rel_error) worst = &b;
  }
  return worst;
}

nlohmann::ordered_json to_json(const GradReport& report) {
  nlohmann::ordered_json j;
  j["variant"] = report.variant;
  j["seed"] = report.seed;
  j["pass"] = report.pass;
  j["threshold"] = report.threshold;
  j["max_rel_error"] = report.max_rel_error();
  j["resamples"] = report.resamples;
  j["refined"] = report.refined;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& b : report.blocks) {
    arr.push_back({{"name", b.name},
                   {"max_rel_error", b.max_rel_error},
                   {"mean_rel_error", b.mean_rel_error},
                   {"worst_index", b.worst_index},
                   {"worst_analytic", b.worst_analytic},
                   {"worst_numeric", b.worst_numeric},
                   {"count", b.count}});
  }
  j["blocks"] = arr;
  return j;
}

void LayerCheckConfig::validate() const {
  if (s1 == 0 || s2 == 0 || slots == 0 || batch == 0) {
    throw ParamError("gradcheck: all dimensions must be >= 1");
  }
  if (s1 + s2 > kMaxCheckDim || slots > kMaxCheckSlots || batch > kMaxCheckBatch) {
    throw ParamError("gradcheck: dims exceed caps (d <= " + std::to_string(kMaxCheckDim) +
                     ", k <= " + std::to_string(kMaxCheckSlots) + ", batch <= " +
                     std::to_string(kMaxCheckBatch) + ")");
  }
  if (variant.kind == FusionKind::mbaf_resampled && variant.d_out > kMaxCheckDim) {
    throw ParamError("gradcheck: resampled d_out exceeds cap " + std::to_string(kMaxCheckDim));
  }
  if (!(step > 0.0)) throw ParamError("gradcheck: step must be > 0");
}

GradReport check_layer(const LayerCheckConfig& config, std::uint64_t seed) {
  config.validate();
  GradReport report;
  report.variant = to_string(config.variant);
  report.seed = seed;
  report.threshold = config.threshold;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(attempt_seed(seed, attempt));
    FusionLayer layer = make_fusion_layer(config.variant, config.s1, config.s2, rng);
    if (config.zero_weights) {
      for (auto& b : blocks(layer)) std::fill(b.values.begin(), b.values.end(), 0.0);
    }
    const MemoryState mem = make_memory(layer, config.slots, rng);
    std::vector<DenseVector> m1, m2;
    for (std::size_t n = 0; n < config.batch; ++n) {
      m1.push_back(rng_normal(rng, config.s1, 0.0, 1.0));
      m2.push_back(rng_normal(rng, config.s2, 0.0, 1.0));
    }

    LayerForward fwd = mbaf_forward(layer, mem, m1, m2);
    if (!config.zero_weights && near_relu_kink(layer, fwd.trace, config.kink_margin)) {
      ++report.resamples;
      continue;
    }
    std::vector<DenseVector> grad_o;
    for (const auto& o : fwd.outputs) {
      DenseVector g = o;
      for (double& v : g) v *= 2.0;
      grad_o.push_back(std::move(g));
    }
    LayerBackward bwd = mbaf_backward(layer, fwd.trace, mem, grad_o);

    detail::PreciseLayer<Wide> wide(layer, mem);
    detail::PreciseLayer<Quad> quad(layer, mem);
    std::vector<std::vector<Wide>> w1(config.batch), w2(config.batch);
    std::vector<std::vector<Quad>> q1(config.batch), q2(config.batch);
    for (std::size_t n = 0; n < config.batch; ++n) {
      w1[n] = detail::widen<Wide>(m1[n]);
      w2[n] = detail::widen<Wide>(m2[n]);
      q1[n] = detail::widen<Quad>(m1[n]);
      q2[n] = detail::widen<Quad>(m2[n]);
    }
    auto loss_of = [&](const auto& layer_copy, const auto& x1, const auto& x2) {
      using T = typename std::decay_t<decltype(x1)>::value_type::value_type;
      T total = 0;
      for (std::size_t n = 0; n < config.batch; ++n)
        for (T v : layer_copy.forward(x1[n], x2[n])) total += v * v;
      return total;
    };
    auto wide_loss = [&] { return loss_of(wide, w1, w2); };
    auto quad_loss = [&] { return loss_of(quad, q1, q2); };
    require_agreement(sum_of_squares(fwd.outputs), wide_loss(), "check_layer");
    require_agreement(sum_of_squares(fwd.outputs), quad_loss(), "check_layer");

    auto params = blocks(layer);
    auto grads = blocks(bwd.grads, layer);
    auto wide_values = wide.blocks();
    auto quad_values = quad.blocks();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Probe probe{wide_values[i], wide_loss, quad_values[i], quad_loss};
      DenseVector numeric =
          numeric_block(probe, grads[i].values, config.step, config.threshold, report.refined);
      report.blocks.push_back(compare(params[i].name, grads[i].values, numeric));
    }

    // Inputs are perturbed through a flat copy scattered back before each
    // evaluation.
    auto scatter = [](const auto& flat, auto& inputs) {
      const std::size_t width = inputs.front().size();
      for (std::size_t n = 0; n < inputs.size(); ++n)
        std::copy_n(flat.begin() + n * width, width, inputs[n].begin());
    };
    auto gather = [](const auto& inputs) {
      std::vector<typename std::decay_t<decltype(inputs)>::value_type::value_type> flat;
      for (const auto& v : inputs) flat.insert(flat.end(), v.begin(), v.end());
      return flat;
    };
    auto input_check = [&](auto& wide_in, auto& quad_in, const std::vector<DenseVector>& analytic,
                           const std::string& name) {
      auto wide_flat = gather(wide_in);
      auto quad_flat = gather(quad_in);
      const Probe probe{&wide_flat,
                        [&] {
                          scatter(wide_flat, wide_in);
                          return wide_loss();
                        },
                        &quad_flat,
                        [&] {
                          scatter(quad_flat, quad_in);
                          return quad_loss();
                        }};
      const DenseVector expect = flatten(analytic);
      DenseVector numeric =
          numeric_block(probe, expect.span(), config.step, config.threshold, report.refined);
      scatter(wide_flat, wide_in);
      scatter(quad_flat, quad_in);
      report.blocks.push_back(compare(name, expect.span(), numeric));
    };
    input_check(w1, q1, bwd.grad_m1, "input.m1");
    input_check(w2, q2, bwd.grad_m2, "input.m2");
    finish(report);
    return report;
  }
  throw NumericError("check_layer: could not draw a configuration away from ReLU kinks");
}

GradReport check_classifier(const ClassifierCheckConfig& config, std::uint64_t seed) {
  GradReport report;
  report.variant = "classifier/" + to_string(config.variant);
  report.seed = seed;
  report.threshold = config.threshold;

  ClassifierConfig cc;
  cc.encoder_hidden = config.encoder_hidden;
  cc.head_hidden = config.head_hidden;
  cc.classes = config.classes;
  cc.dropout_rate = config.dropout_rate;
  cc.fusion = config.variant;
  cc.slots = config.slots;
  cc.batch = config.batch;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(attempt_seed(seed, attempt));
    ClassifierParams params = init_classifier(cc, config.s1, config.s2, rng);
    const MemoryState mem = make_memory(params.fusion, config.slots, rng);
    std::vector<Sample> batch(config.batch);
    std::vector<DenseVector> masks;
    for (auto& s : batch) {
      s.m1 = rng_normal(rng, config.s1, 0.0, 1.0);
      s.m2 = rng_normal(rng, config.s2, 0.0, 1.0);
      s.label = rng.below(config.classes);
      masks.push_back(dropout_mask(rng, config.head_hidden, config.dropout_rate));
    }

    // Reject draws with any ReLU input near zero.
    bool kink = false;
    std::vector<DenseVector> m1, m2;
    for (const auto& s : batch) {
      m1.push_back(s.m1);
      m2.push_back(s.m2);
    }
    for (auto [enc, inputs] : {std::pair{&params.encoder1, &m1}, std::pair{&params.encoder2, &m2}}) {
      if (!*enc) continue;
      for (const auto& x : *inputs) {
        DenseVector pre = matvec_t((*enc)->w, x);
        axpy(1.0, (*enc)->b, pre.span());
        kink = kink || any_below(pre, config.kink_margin);
      }
    }
    const auto e1 = encode(params.encoder1, m1);
    const auto e2 = encode(params.encoder2, m2);
    LayerForward fwd = mbaf_forward(params.fusion, mem, e1, e2);
    kink = kink || near_relu_kink(params.fusion, fwd.trace, config.kink_margin);
    for (std::size_t n = 0; n < batch.size(); ++n) {
      kink = kink || any_below(head_forward(params, fwd.outputs[n], masks[n]).pre, config.kink_margin);
    }
    if (kink) {
      ++report.resamples;
      continue;
    }

    BatchResult analytic = forward_backward(params, mem, batch, masks);
    detail::PreciseClassifier<Wide> wide(params, mem);
    detail::PreciseClassifier<Quad> quad(params, mem);
    auto wide_loss = [&] { return wide.loss(batch, masks); };
    auto quad_loss = [&] { return quad.loss(batch, masks); };
    require_agreement(analytic.loss, wide_loss(), "check_classifier");
    require_agreement(analytic.loss, quad_loss(), "check_classifier");
    auto p = blocks(params);
    auto g = blocks(analytic.grads);
    auto wide_values = wide.blocks();
    auto quad_values = quad.blocks();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Probe probe{wide_values[i], wide_loss, quad_values[i], quad_loss};
      DenseVector numeric =
          numeric_block(probe, g[i].values, config.step, config.threshold, report.refined);
      report.blocks.push_back(compare(p[i].name, g[i].values, numeric));
    }
    finish(report);
    return report;
  }
  throw NumericError("check_classifier: could not draw a configuration away from ReLU kinks");
}

}  // namespace mbaf
