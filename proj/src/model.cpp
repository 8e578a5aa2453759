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

#include "mbaf/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <omp.h>

namespace mbaf {
namespace {

constexpr std::uint64_t kDropoutStream = 0xD1B54A32D192ED03ULL;
constexpr std::uint64_t kMemoryStream = 0x8CB92BA72F3D8DD7ULL;

DenseLayer init_dense(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return {rng_uniform_matrix(rng, fan_in, fan_out, -bound, bound),
          rng_uniform(rng, fan_out, -bound, bound)};
}

DenseLayer zero_dense(const DenseLayer& like) {
  return {DenseMatrix(like.w.rows(), like.w.cols()), DenseVector(like.b.size())};
}

DenseVector dense_pre(const DenseLayer& layer, std::span<const double> x) {
  DenseVector y = matvec_t(layer.w, x);
  axpy(1.0, layer.b, y.span());
  return y;
}

void append_dense(std::vector<NamedBlock>& out, DenseLayer& layer, const std::string& name) {
  out.push_back({name + ".w", layer.w.span()});
  out.push_back({name + ".b", layer.b.span()});
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void ClassifierConfig::validate() const {
  if (classes < 2) throw ParamError("classifier: classes must be >= 2");
  if (head_hidden == 0) throw ParamError("classifier: head_hidden must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ParamError("classifier: dropout_rate must be in [0, 1)");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParamError("classifier: lr must be >= 0");
  if (batch == 0) throw ParamError("classifier: batch must be >= 1");
  if (fusion.has_memory() && slots == 0) throw ParamError("classifier: slots must be >= 1");
}

ClassifierParams init_classifier(const ClassifierConfig& config, std::size_t s1,
                                 std::size_t s2, Rng& rng) {
  config.validate();
  ClassifierParams p;
  std::size_t f1 = s1, f2 = s2;
  if (config.encoder_hidden > 0) {
    p.encoder1 = init_dense(rng, s1, config.encoder_hidden);
    p.encoder2 = init_dense(rng, s2, config.encoder_hidden);
    f1 = f2 = config.encoder_hidden;
  }
  p.fusion = make_fusion_layer(config.fusion, f1, f2, rng);
  p.head_hidden = init_dense(rng, p.fusion.output_dim(), config.head_hidden);
  p.head_out = init_dense(rng, config.head_hidden, config.classes);
  return p;
}

ClassifierParams zeros_like(const ClassifierParams& params) {
  ClassifierParams z;
  if (params.encoder1) z.encoder1 = zero_dense(*params.encoder1);
  if (params.encoder2) z.encoder2 = zero_dense(*params.encoder2);
  z.fusion.variant = params.fusion.variant;
  z.fusion.s1 = params.fusion.s1;
  z.fusion.s2 = params.fusion.s2;
  if (params.fusion.variant.has_memory()) {
    const std::size_t d = params.fusion.unit_dim();
    z.fusion.unit = zero_params(d);
    z.fusion.projection =
        DenseMatrix(params.fusion.projection.rows(), params.fusion.projection.cols());
  }
  z.head_hidden = zero_dense(params.head_hidden);
  z.head_out = zero_dense(params.head_out);
  return z;
}

std::vector<NamedBlock> blocks(ClassifierParams& params) {
  std::vector<NamedBlock> out;
  if (params.encoder1) append_dense(out, *params.encoder1, "encoder1");
  if (params.encoder2) append_dense(out, *params.encoder2, "encoder2");
  for (auto& b : blocks(params.fusion)) out.push_back(b);
  append_dense(out, params.head_hidden, "head.hidden");
  append_dense(out, params.head_out, "head.out");
  return out;
}

TrainState make_train_state(const ClassifierConfig& config, std::size_t s1, std::size_t s2) {
  TrainState state;
  state.config = config;
  Rng init_rng(config.seed);
  state.params = init_classifier(config, s1, s2, init_rng);
  state.memory = make_memory(state.params.fusion, config.slots, init_rng);
  for (const auto& b : blocks(state.params)) {
    state.adam_m.emplace_back(b.values.size(), 0.0);
    state.adam_v.emplace_back(b.values.size(), 0.0);
  }
  state.dropout_rng = Rng(config.seed ^ kDropoutStream);
  return state;
}

std::vector<DenseVector> encode(const std::optional<DenseLayer>& encoder,
                                std::span<const DenseVector> batch) {
  if (!encoder) return {batch.begin(), batch.end()};
  std::vector<DenseVector> out(batch.size());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (batch[n].size() != encoder->w.rows()) {
      throw ShapeError("encode: input width " + std::to_string(batch[n].size()) +
                       ", encoder expects " + std::to_string(encoder->w.rows()));
    }
    out[n] = relu(dense_pre(*encoder, batch[n]));
  }
  return out;
}

DenseVector dropout_mask(Rng& rng, std::size_t n, double rate) {
  DenseVector mask(n, 1.0);
  if (rate <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

HeadTrace head_forward(const ClassifierParams& params, std::span<const double> fused,
                       std::span<const double> mask) {
  if (fused.size() != params.head_hidden.w.rows()) {
    throw ShapeError("head_forward: fused width " + std::to_string(fused.size()) +
                     ", head expects " + std::to_string(params.head_hidden.w.rows()));
  }
  HeadTrace t;
  t.pre = dense_pre(params.head_hidden, fused);
  t.hidden = relu(t.pre);
  if (!mask.empty()) {
    if (mask.size() != t.hidden.size()) throw ShapeError("head_forward: dropout mask width");
    for (std::size_t i = 0; i < mask.size(); ++i) t.hidden[i] *= mask[i];
  }
  t.logits = dense_pre(params.head_out, t.hidden);
  return t;
}

LossAndGrad cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ParamError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - peak);
  const double log_norm = peak + std::log(total);
  LossAndGrad out;
  out.loss = log_norm - logits[label];
  out.grad_logits = softmax(logits);
  out.grad_logits[label] -= 1.0;
  return out;
}

BatchResult forward_backward(const ClassifierParams& params, const MemoryState& memory,
                             std::span<const Sample> batch, std::span<const DenseVector> masks,
                             bool want_grads) {
  if (batch.empty()) throw ParamError("forward_backward: empty batch");
  if (!masks.empty() && masks.size() != batch.size()) {
    throw ShapeError("forward_backward: one dropout mask per example required");
  }
  const std::size_t n_batch = batch.size();
  const std::size_t classes = params.head_out.b.size();
  for (const auto& s : batch) {
    if (s.label >= classes) {
      throw ParamError("forward_backward: label " + std::to_string(s.label) +
                       " out of range for " + std::to_string(classes) + " classes");
    }
  }
  if (!masks.empty()) {
    for (const auto& m : masks) {
      if (m.size() != params.head_hidden.b.size()) {
        throw ShapeError("forward_backward: dropout mask width mismatch");
      }
    }
  }
  std::vector<DenseVector> m1, m2;
  m1.reserve(n_batch);
  m2.reserve(n_batch);
  for (const auto& s : batch) {
    m1.push_back(s.m1);
    m2.push_back(s.m2);
  }
  const std::vector<DenseVector> e1 = encode(params.encoder1, m1);
  const std::vector<DenseVector> e2 = encode(params.encoder2, m2);
  LayerForward fused = mbaf_forward(params.fusion, memory, e1, e2);

  BatchResult out;
  out.memory = std::move(fused.memory);
  out.logits.resize(n_batch);
  std::vector<HeadTrace> heads(n_batch);
  std::vector<double> losses(n_batch);
  std::vector<DenseVector> g_logits(n_batch);
  const double inv_batch = 1.0 / static_cast<double>(n_batch);

#pragma omp parallel for schedule(static) if (n_batch > 1)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(n_batch); ++n) {
    std::span<const double> mask;
    if (!masks.empty()) mask = masks[n];
    heads[n] = head_forward(params, fused.outputs[n], mask);
    LossAndGrad ce = cross_entropy(heads[n].logits, batch[n].label);
    losses[n] = ce.loss;
    for (double& g : ce.grad_logits) g *= inv_batch;
    g_logits[n] = std::move(ce.grad_logits);
    out.logits[n] = heads[n].logits;
  }
  double loss = 0.0;
  for (double l : losses) loss += l;
  out.loss = loss * inv_batch;
  if (!std::isfinite(out.loss)) throw NumericError("forward_backward: non-finite loss");
  if (!want_grads) return out;

  out.grads = zeros_like(params);
  ClassifierParams& g = out.grads;

  std::vector<DenseVector> g_pre(n_batch), g_fused(n_batch), hidden(n_batch);
#pragma omp parallel for schedule(static) if (n_batch > 1)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(n_batch); ++n) {
    DenseVector g_hidden = matvec(params.head_out.w, g_logits[n]);
    DenseVector gp(g_hidden.size());
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double m = masks.empty() ? 1.0 : masks[n][i];
      gp[i] = heads[n].pre[i] > 0.0 ? g_hidden[i] * m : 0.0;
    }
    g_fused[n] = matvec(params.head_hidden.w, gp);
    g_pre[n] = std::move(gp);
    hidden[n] = heads[n].hidden;
  }
  for (std::size_t n = 0; n < n_batch; ++n) {
    axpy(1.0, g_logits[n], g.head_out.b.span());
    axpy(1.0, g_pre[n], g.head_hidden.b.span());
  }
  outer_accumulate_batch(g.head_out.w, hidden, g_logits);
  outer_accumulate_batch(g.head_hidden.w, fused.outputs, g_pre);

  LayerBackward fb = mbaf_backward(params.fusion, fused.trace, memory, g_fused);
  {
    auto dst = blocks(g.fusion);
    auto src = blocks(fb.grads, params.fusion);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::copy(src[i].values.begin(), src[i].values.end(), dst[i].values.begin());
    }
  }

  auto encoder_backward = [&](const std::optional<DenseLayer>& enc, std::optional<DenseLayer>& genc,
                              const std::vector<DenseVector>& inputs,
                              const std::vector<DenseVector>& outputs,
                              const std::vector<DenseVector>& g_out) {
    if (!enc) return;
    std::vector<DenseVector> g_pre_enc(n_batch);
    for (std::size_t n = 0; n < n_batch; ++n) {
      DenseVector gp(outputs[n].size());
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = outputs[n][i] > 0.0 ? g_out[n][i] : 0.0;
      axpy(1.0, gp, genc->b.span());
      g_pre_enc[n] = std::move(gp);
    }
    outer_accumulate_batch(genc->w, inputs, g_pre_enc);
  };
  encoder_backward(params.encoder1, g.encoder1, m1, e1, fb.grad_m1);
  encoder_backward(params.encoder2, g.encoder2, m2, e2, fb.grad_m2);
  return out;
}

void adam_step(TrainState& state, ClassifierParams& grads, double lr, double beta1,
               double beta2, double eps) {
  auto p = blocks(state.params);
  auto g = blocks(grads);
  if (p.size() != g.size() || p.size() != state.adam_m.size()) {
    throw ShapeError("adam_step: parameter/gradient block count mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].values.size() != g[i].values.size() ||
        p[i].values.size() != state.adam_m[i].size()) {
      throw ShapeError("adam_step: block '" + p[i].name + "' shape mismatch");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(beta1, t);
  const double correct2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto theta = p[i].values;
    auto grad = g[i].values;
    auto& m = state.adam_m[i];
    auto& v = state.adam_v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

EpochResult train_epoch(TrainState& state, std::span<const Sample> data) {
  const ClassifierConfig& cfg = state.config;
  if (data.empty()) throw ParamError("train_epoch: empty dataset");
  const std::size_t batches = data.size() / cfg.batch;
  if (batches == 0) {
    throw ParamError("train_epoch: dataset smaller than one batch (" +
                     std::to_string(data.size()) + " < " + std::to_string(cfg.batch) + ")");
  }
  if (cfg.reinit_memory_per_epoch && state.params.fusion.variant.has_memory()) {
    Rng mem_rng(cfg.seed ^ kMemoryStream ^ state.step);
    const bool writes = state.memory.writes_enabled;
    state.memory = make_memory(state.params.fusion, cfg.slots, mem_rng);
    state.memory.writes_enabled = writes;
  }

  const std::size_t head_width = cfg.head_hidden;
  EpochResult result;
  double loss_sum = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    auto batch = data.subspan(b * cfg.batch, cfg.batch);
    std::vector<DenseVector> masks;
    if (cfg.dropout_rate > 0.0) {
      masks.reserve(batch.size());
      for (std::size_t n = 0; n < batch.size(); ++n) {
        masks.push_back(dropout_mask(state.dropout_rng, head_width, cfg.dropout_rate));
      }
    }
    BatchResult r = forward_backward(state.params, state.memory, batch, masks);
    adam_step(state, r.grads, cfg.lr);
    state.memory = std::move(r.memory);
    loss_sum += r.loss;
    result.examples += batch.size();
  }
  for (const auto& b : blocks(state.params)) {
    if (!all_finite(b.values)) throw NumericError("train_epoch: non-finite parameter in " + b.name);
  }
  result.loss = loss_sum / static_cast<double>(batches);
  return result;
}

EvalResult evaluate(const ClassifierParams& params, const MemoryState& memory,
                    std::size_t classes, std::size_t batch, std::span<const Sample> data,
                    bool freeze_writes) {
  if (data.empty()) throw ParamError("evaluate: empty dataset");
  if (batch == 0) throw ParamError("evaluate: batch must be >= 1");
  EvalResult out;
  out.memory = memory;
  const bool writes = memory.writes_enabled;
  out.memory.writes_enabled = writes && !freeze_writes;
  std::vector<std::size_t> truth;
  truth.reserve(data.size());
  out.predictions.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += batch) {
    auto chunk = data.subspan(start, std::min(batch, data.size() - start));
    BatchResult r = forward_backward(params, out.memory, chunk, {}, false);
    out.memory = std::move(r.memory);
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      out.predictions.push_back(argmax(r.logits[n]));
      truth.push_back(chunk[n].label);
    }
  }
  out.memory.writes_enabled = writes;
  out.report = compute_report(confusion_matrix(truth, out.predictions, classes));
  return out;
}

EvalResult evaluate(const TrainState& state, std::span<const Sample> data, bool freeze_writes) {
  return evaluate(state.params, state.memory, state.config.classes, state.config.batch, data,
                  freeze_writes);
}

std::vector<CheckpointBlock> snapshot(const TrainState& state) {
  std::vector<CheckpointBlock> out;
  ClassifierParams params = state.params;
  for (const auto& b : blocks(params)) {
    DenseMatrix m(1, b.values.size());
    std::copy(b.values.begin(), b.values.end(), m.data());
    out.push_back({b.name, std::move(m)});
  }
  if (state.params.fusion.variant.has_memory()) {
    for (auto& b : snapshot(state.memory, "fusion.")) out.push_back(std::move(b));
  }
  out.push_back({"adam.step", DenseMatrix(1, 1, static_cast<double>(state.step))});
  return out;
}

void restore(TrainState& state, const std::vector<CheckpointBlock>& saved) {
  for (auto& b : blocks(state.params)) {
    const CheckpointBlock& src = find_block(saved, b.name);
    if (src.values.size() != b.values.size()) {
      throw CheckpointError("checkpoint: block '" + b.name + "' has " +
                            std::to_string(src.values.size()) + " values, expected " +
                            std::to_string(b.values.size()));
    }
    std::copy(src.values.data(), src.values.data() + src.values.size(), b.values.begin());
  }
  if (state.params.fusion.variant.has_memory()) {
    MemoryState mem = restore_memory(saved, "fusion.");
    if (mem.slots != state.memory.slots || mem.dim != state.memory.dim) {
      throw CheckpointError("checkpoint: memory shape does not match the configuration");
    }
    state.memory = std::move(mem);
  }
  state.step = static_cast<std::uint64_t>(find_block(saved, "adam.step").values(0, 0));
}

}  // namespace mbaf
