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

// Bimodal classifier: per-mode encoder -> fusion layer -> dense head.
//
//   e_i    = relu(W_ei^T m_i + b_ei)     (identity when encoder_hidden == 0)
//   f      = fusion(e_1, e_2)
//   a      = relu(W_1^T f + b_1) * dropout_mask
//   logits = W_2^T a + b_2
//
// Trained with softmax cross-entropy and Adam, batches taken in stream order
// so the fusion memory sees the sequence as it was generated.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mbaf/checkpoint.hpp"
#include "mbaf/fusion.hpp"
#include "mbaf/metrics.hpp"
#include "mbaf/synthdata.hpp"

namespace mbaf {

struct ClassifierConfig {
  std::size_t encoder_hidden = 0;
  std::size_t head_hidden = 32;
  std::size_t classes = 3;
  double dropout_rate = 0.0;
  FusionVariant fusion = FusionVariant::naive_attention();
  std::size_t slots = 30;
  double lr = 0.001;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  bool reinit_memory_per_epoch = false;

  void validate() const;
};

struct DenseLayer {
  DenseMatrix w;  // fan_in x fan_out
  DenseVector b;
};

struct ClassifierParams {
  std::optional<DenseLayer> encoder1;
  std::optional<DenseLayer> encoder2;
  FusionLayer fusion;
  DenseLayer head_hidden;
  DenseLayer head_out;
};

// Builds weights for input widths s1, s2 under config.
ClassifierParams init_classifier(const ClassifierConfig& config, std::size_t s1,
                                 std::size_t s2, Rng& rng);
ClassifierParams zeros_like(const ClassifierParams& params);
std::vector<NamedBlock> blocks(ClassifierParams& params);

struct TrainState {
  ClassifierConfig config;
  ClassifierParams params;
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
  std::uint64_t step = 0;
  MemoryState memory;
  Rng dropout_rng{0};
};

TrainState make_train_state(const ClassifierConfig& config, std::size_t s1, std::size_t s2);

// Identity when the encoder is absent.
std::vector<DenseVector> encode(const std::optional<DenseLayer>& encoder,
                                std::span<const DenseVector> batch);

struct HeadTrace {
  DenseVector pre;     // W_1^T f + b_1
  DenseVector hidden;  // relu(pre) * mask
  DenseVector logits;
};

HeadTrace head_forward(const ClassifierParams& params, std::span<const double> fused,
                       std::span<const double> dropout_mask);

// Inverted-dropout mask: entries 0 or 1/(1-rate). All ones when rate == 0.
DenseVector dropout_mask(Rng& rng, std::size_t n, double rate);

struct LossAndGrad {
  double loss = 0.0;
  DenseVector grad_logits;
};
LossAndGrad cross_entropy(std::span<const double> logits, std::size_t label);

// One batch through the whole classifier. masks may be empty (no dropout).
struct BatchResult {
  double loss = 0.0;  // mean over the batch
  ClassifierParams grads;
  MemoryState memory;  // after the fusion write
  std::vector<DenseVector> logits;
};
BatchResult forward_backward(const ClassifierParams& params, const MemoryState& memory,
                             std::span<const Sample> batch,
                             std::span<const DenseVector> masks, bool want_grads = true);

void adam_step(TrainState& state, ClassifierParams& grads, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct EpochResult {
  double loss = 0.0;
  std::size_t examples = 0;
};
// Full batches only; the ragged tail is dropped.
EpochResult train_epoch(TrainState& state, std::span<const Sample> data);

struct EvalResult {
  MetricsReport report;
  std::vector<std::size_t> predictions;
  MemoryState memory;  // memory after the pass
};
// Dropout off. Memory starts from state.memory and is written unless frozen;
// state itself is not modified.
EvalResult evaluate(const TrainState& state, std::span<const Sample> data, bool freeze_writes);
EvalResult evaluate(const ClassifierParams& params, const MemoryState& memory,
                    std::size_t classes, std::size_t batch, std::span<const Sample> data,
                    bool freeze_writes);

std::vector<CheckpointBlock> snapshot(const TrainState& state);
void restore(TrainState& state, const std::vector<CheckpointBlock>& blocks);

}  // namespace mbaf
