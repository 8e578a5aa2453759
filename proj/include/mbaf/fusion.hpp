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

// Memory-based attentive fusion layer.
//
// For a batch of bimodal feature pairs (m1, m2) and a k x d slot memory M:
//
//   x     = m1 (+) m2                      controller
//   q     = W_r^T x + b_r
//   z     = softmax_j <q, M[j]>            key over slots
//   m_r   = sum_j z_j M[j]                 reader
//   b     = W_c^T (query (+) m_r) + b_c    composer, query = x or m2 (+) m1
//   alpha = softmax(b)
//   c     = alpha * b
//   h     = relu(c * w)                    transform into memory space
//   o     = x + h                          output, same width as x
//
// After the batch, one write blends every slot toward the batch's h vectors:
//   M'[j] = M[j] (1 - mean_n z_nj) + mean_n (z_nj h_n).
//
// Every read in a batch sees the same pre-write memory. Gradients treat that
// memory as a constant.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mbaf/numcore.hpp"

namespace mbaf {

struct MemoryState {
  std::size_t slots = 0;
  std::size_t dim = 0;
  DenseMatrix M;
  bool writes_enabled = true;
};

MemoryState memory_init(Rng& rng, std::size_t slots, std::size_t dim);

// Learnable weights of one MBAF unit of width d. Weight matrices are stored
// fan_in x fan_out and applied as W^T x.
struct MbafParams {
  DenseMatrix w_read;     // d x d
  DenseVector b_read;     // d
  DenseMatrix w_compose;  // 2d x d
  DenseVector b_compose;  // d
  DenseVector w_scale;    // d, elementwise transform weight

  std::size_t dim() const { return b_read.size(); }
};

struct MbafGrads {
  DenseMatrix w_read;
  DenseVector b_read;
  DenseMatrix w_compose;
  DenseVector b_compose;
  DenseVector w_scale;

  static MbafGrads zeros_like(const MbafParams& p);
};

// Every weight uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]. w_scale has
// fan_in 1.
MbafParams init_params(Rng& rng, std::size_t dim);
MbafParams zero_params(std::size_t dim);

struct NamedBlock {
  std::string name;
  std::span<double> values;
};
struct ConstNamedBlock {
  std::string name;
  std::span<const double> values;
};

// Blocks in a fixed order: w_read, b_read, w_compose, b_compose, w_scale.
std::vector<NamedBlock> blocks(MbafParams& p, const std::string& prefix = "");
std::vector<NamedBlock> blocks(MbafGrads& g, const std::string& prefix = "");

// Intermediates of one example.
struct StepTrace {
  DenseVector x;
  DenseVector query;
  DenseVector z;
  DenseVector m_read;
  DenseVector pre_mlp;
  DenseVector b;
  DenseVector alpha;
  DenseVector c;
  DenseVector h;
  DenseVector o;
};

struct ForwardTrace {
  std::vector<StepTrace> steps;
};

// ---- single-step pieces ----------------------------------------------------

DenseVector read_key(const MbafParams& params, std::span<const double> x,
                     const MemoryState& mem);
DenseVector read_slot(std::span<const double> z, const MemoryState& mem);

struct Composition {
  DenseVector b;
  DenseVector alpha;
  DenseVector c;
};
Composition compose(const MbafParams& params, std::span<const double> query,
                    std::span<const double> m_read);

DenseVector transform(const MbafParams& params, std::span<const double> c);

// Aggregated erase-and-write. Identity when writes are disabled. The result
// does not depend on the order of examples in the batch: contributions are
// summed in a canonical (lexicographic) order.
MemoryState write_memory(const MemoryState& mem, std::span<const DenseVector> batch_z,
                         std::span<const DenseVector> batch_h);

DenseVector fuse_output(std::span<const double> x, std::span<const double> h);
DenseVector swap_concat(std::span<const double> m1, std::span<const double> m2);
DenseVector resample_output(std::span<const double> o, const DenseMatrix& proj);

std::vector<DenseVector> naive_fusion(std::span<const DenseVector> batch_m1,
                                      std::span<const DenseVector> batch_m2);

// Closed-form count 3(s1+s2)^2 + (q+2)(s1+s2), q the batch size.
std::uint64_t param_count_formula(std::uint64_t s1, std::uint64_t s2, std::uint64_t q);
// Learnable scalars actually held by params: 3d^2 + 3d.
std::uint64_t param_count_actual(const MbafParams& params);

// ---- one MBAF unit over a batch ---------------------------------------------

struct UnitForward {
  std::vector<DenseVector> outputs;
  ForwardTrace trace;
  MemoryState memory;  // after the write
};

// queries may be empty, in which case each x is its own composer query.
UnitForward mbaf_unit_forward(const MbafParams& params, const MemoryState& mem,
                              std::span<const DenseVector> batch_x,
                              std::span<const DenseVector> batch_query = {});

struct UnitBackward {
  MbafGrads grads;
  std::vector<DenseVector> grad_x;
  std::vector<DenseVector> grad_query;  // empty when the query was x itself
};

UnitBackward mbaf_unit_backward(const MbafParams& params, const ForwardTrace& trace,
                                const MemoryState& mem_prev,
                                std::span<const DenseVector> batch_grad_o,
                                bool separate_query = false);

// ---- fusion variants ----------------------------------------------------------

enum class FusionKind {
  naive_fusion,
  mbaf_naive_attention,
  mbaf_cross_attention,
  mbaf_single_mode,
  mbaf_resampled,
};

struct FusionVariant {
  FusionKind kind = FusionKind::mbaf_naive_attention;
  int mode_index = 1;       // single-mode only, 1 or 2
  std::size_t d_out = 0;    // resampled only

  static FusionVariant naive() { return {FusionKind::naive_fusion, 1, 0}; }
  static FusionVariant naive_attention() { return {FusionKind::mbaf_naive_attention, 1, 0}; }
  static FusionVariant cross_attention() { return {FusionKind::mbaf_cross_attention, 1, 0}; }
  static FusionVariant single_mode(int mode);
  static FusionVariant resampled(std::size_t d_out);

  bool has_memory() const { return kind != FusionKind::naive_fusion; }
  bool operator==(const FusionVariant&) const = default;
};

// Text form used by configs and the CLI: "nf", "na", "ca", "single:1",
// "single:2", "resampled:<d_out>".
FusionVariant parse_variant(const std::string& text);
std::string to_string(const FusionVariant& v);

// A fusion variant bound to concrete mode widths, with its weights.
struct FusionLayer {
  FusionVariant variant;
  std::size_t s1 = 0;
  std::size_t s2 = 0;
  MbafParams unit;         // unused for naive fusion
  DenseMatrix projection;  // resampled only: d x d_out

  // Width of the MBAF unit (its memory width).
  std::size_t unit_dim() const;
  std::size_t output_dim() const;
};

struct FusionGrads {
  MbafGrads unit;
  DenseMatrix projection;
};

FusionLayer make_fusion_layer(const FusionVariant& variant, std::size_t s1, std::size_t s2,
                              Rng& rng);
// Memory for the layer's unit; a 0 x 0 placeholder for naive fusion.
MemoryState make_memory(const FusionLayer& layer, std::size_t slots, Rng& rng);

std::vector<NamedBlock> blocks(FusionLayer& layer);
std::vector<NamedBlock> blocks(FusionGrads& grads, const FusionLayer& layer);
FusionGrads zero_grads(const FusionLayer& layer);

struct LayerTrace {
  ForwardTrace unit;
  std::vector<DenseVector> pre_resample;  // resampled only
};

struct LayerForward {
  std::vector<DenseVector> outputs;
  LayerTrace trace;
  MemoryState memory;
};

LayerForward mbaf_forward(const FusionLayer& layer, const MemoryState& mem,
                          std::span<const DenseVector> batch_m1,
                          std::span<const DenseVector> batch_m2);

struct LayerBackward {
  FusionGrads grads;
  std::vector<DenseVector> grad_m1;
  std::vector<DenseVector> grad_m2;
};

LayerBackward mbaf_backward(const FusionLayer& layer, const LayerTrace& trace,
                            const MemoryState& mem_prev,
                            std::span<const DenseVector> batch_grad_o);

}  // namespace mbaf
