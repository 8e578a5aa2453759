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

#include "mbaf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <omp.h>

namespace mbaf {
namespace {

std::string str(std::size_t n) { return std::to_string(n); }

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

DenseVector slice(std::span<const double> v, std::size_t begin, std::size_t len) {
  return DenseVector(std::vector<double>(v.begin() + begin, v.begin() + begin + len));
}

void check_batch(std::span<const DenseVector> batch, std::size_t dim, const char* what) {
  if (batch.empty()) throw ParamError(std::string(what) + ": empty batch");
  for (const auto& v : batch) {
    require(v.size() == dim, std::string(what) + ": expected width " + str(dim) + ", got " +
                                 str(v.size()));
  }
}

bool lex_less(const DenseVector& a, const DenseVector& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

MemoryState memory_init(Rng& rng, std::size_t slots, std::size_t dim) {
  if (slots == 0 || dim == 0) throw ParamError("memory_init: slots and dim must be >= 1");
  MemoryState mem;
  mem.slots = slots;
  mem.dim = dim;
  mem.M = rng_normal_matrix(rng, slots, dim, 0.0, 1.0);
  mem.writes_enabled = true;
  return mem;
}

MbafGrads MbafGrads::zeros_like(const MbafParams& p) {
  MbafGrads g;
  g.w_read = DenseMatrix(p.w_read.rows(), p.w_read.cols());
  g.b_read = DenseVector(p.b_read.size());
  g.w_compose = DenseMatrix(p.w_compose.rows(), p.w_compose.cols());
  g.b_compose = DenseVector(p.b_compose.size());
  g.w_scale = DenseVector(p.w_scale.size());
  return g;
}

MbafParams init_params(Rng& rng, std::size_t dim) {
  if (dim == 0) throw ParamError("init_params: dim must be >= 1");
  const double read_bound = 1.0 / std::sqrt(static_cast<double>(dim));
  const double compose_bound = 1.0 / std::sqrt(static_cast<double>(2 * dim));
  MbafParams p;
  p.w_read = rng_uniform_matrix(rng, dim, dim, -read_bound, read_bound);
  p.b_read = rng_uniform(rng, dim, -read_bound, read_bound);
  p.w_compose = rng_uniform_matrix(rng, 2 * dim, dim, -compose_bound, compose_bound);
  p.b_compose = rng_uniform(rng, dim, -compose_bound, compose_bound);
  p.w_scale = rng_uniform(rng, dim, -1.0, 1.0);
  return p;
}

MbafParams zero_params(std::size_t dim) {
  MbafParams p;
  p.w_read = DenseMatrix(dim, dim);
  p.b_read = DenseVector(dim);
  p.w_compose = DenseMatrix(2 * dim, dim);
  p.b_compose = DenseVector(dim);
  p.w_scale = DenseVector(dim);
  return p;
}

std::vector<NamedBlock> blocks(MbafParams& p, const std::string& prefix) {
  return {{prefix + "w_read", p.w_read.span()},
          {prefix + "b_read", p.b_read.span()},
          {prefix + "w_compose", p.w_compose.span()},
          {prefix + "b_compose", p.b_compose.span()},
          {prefix + "w_scale", p.w_scale.span()}};
}

std::vector<NamedBlock> blocks(MbafGrads& g, const std::string& prefix) {
  return {{prefix + "w_read", g.w_read.span()},
          {prefix + "b_read", g.b_read.span()},
          {prefix + "w_compose", g.w_compose.span()},
          {prefix + "b_compose", g.b_compose.span()},
          {prefix + "w_scale", g.w_scale.span()}};
}

DenseVector read_key(const MbafParams& params, std::span<const double> x,
                     const MemoryState& mem) {
  require(x.size() == mem.dim && params.dim() == mem.dim,
          "read_key: x has " + str(x.size()) + ", memory width " + str(mem.dim) +
              ", params width " + str(params.dim()));
  DenseVector q = matvec_t(params.w_read, x);
  axpy(1.0, params.b_read, q.span());
  return softmax(matvec(mem.M, q));
}

DenseVector read_slot(std::span<const double> z, const MemoryState& mem) {
  require(z.size() == mem.slots,
          "read_slot: key has " + str(z.size()) + " entries, memory has " + str(mem.slots) +
              " slots");
  // m_r = M^T z
  return matvec_t(mem.M, z);
}

Composition compose(const MbafParams& params, std::span<const double> query,
                    std::span<const double> m_read) {
  const std::size_t d = params.dim();
  require(query.size() == d && m_read.size() == d,
          "compose: query " + str(query.size()) + ", read " + str(m_read.size()) +
              ", expected " + str(d));
  Composition out;
  DenseVector joined = concat(query, m_read);
  out.b = matvec_t(params.w_compose, joined);
  axpy(1.0, params.b_compose, out.b.span());
  out.alpha = softmax(out.b);
  out.c = hadamard(out.alpha, out.b);
  return out;
}

DenseVector transform(const MbafParams& params, std::span<const double> c) {
  require(c.size() == params.dim(),
          "transform: c has " + str(c.size()) + ", expected " + str(params.dim()));
  return relu(hadamard(c, params.w_scale));
}

MemoryState write_memory(const MemoryState& mem, std::span<const DenseVector> batch_z,
                         std::span<const DenseVector> batch_h) {
  if (batch_z.empty()) throw ParamError("write_memory: empty batch");
  require(batch_z.size() == batch_h.size(), "write_memory: key/value batch size mismatch");
  check_batch(batch_z, mem.slots, "write_memory keys");
  check_batch(batch_h, mem.dim, "write_memory values");
  if (!mem.writes_enabled) return mem;

  const std::size_t batch = batch_z.size();
  std::vector<std::size_t> order(batch);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (lex_less(batch_z[a], batch_z[b])) return true;
    if (lex_less(batch_z[b], batch_z[a])) return false;
    return lex_less(batch_h[a], batch_h[b]);
  });

  MemoryState out = mem;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  const std::size_t d = mem.dim;
  const bool par = mem.slots * d * batch >= (std::size_t{1} << 15);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(mem.slots); ++j) {
    double z_sum = 0.0;
    std::vector<double> add(d, 0.0);
    for (std::size_t n : order) {
      const double zj = batch_z[n][j];
      z_sum += zj;
      for (std::size_t l = 0; l < d; ++l) add[l] += zj * batch_h[n][l];
    }
    const double keep = 1.0 - z_sum * inv_batch;
    auto row = out.M.row(j);
    for (std::size_t l = 0; l < d; ++l) row[l] = row[l] * keep + add[l] * inv_batch;
  }
  return out;
}

DenseVector fuse_output(std::span<const double> x, std::span<const double> h) {
  require(x.size() == h.size(),
          "fuse_output: x has " + str(x.size()) + ", h has " + str(h.size()));
  return add(x, h);
}

DenseVector swap_concat(std::span<const double> m1, std::span<const double> m2) {
  return concat(m2, m1);
}

DenseVector resample_output(std::span<const double> o, const DenseMatrix& proj) {
  require(o.size() == proj.rows(),
          "resample_output: o has " + str(o.size()) + ", projection has " + str(proj.rows()) +
              " rows");
  return matvec_t(proj, o);
}

std::vector<DenseVector> naive_fusion(std::span<const DenseVector> batch_m1,
                                      std::span<const DenseVector> batch_m2) {
  require(batch_m1.size() == batch_m2.size(), "naive_fusion: batch size mismatch");
  if (batch_m1.empty()) return {};
  check_batch(batch_m1, batch_m1.front().size(), "naive_fusion mode 1");
  check_batch(batch_m2, batch_m2.front().size(), "naive_fusion mode 2");
  std::vector<DenseVector> out;
  out.reserve(batch_m1.size());
  for (std::size_t n = 0; n < batch_m1.size(); ++n) {
    out.push_back(concat(batch_m1[n], batch_m2[n]));
  }
  return out;
}

std::uint64_t param_count_formula(std::uint64_t s1, std::uint64_t s2, std::uint64_t q) {
  const std::uint64_t d = s1 + s2;
  return 3 * d * d + (q + 2) * d;
}

std::uint64_t param_count_actual(const MbafParams& params) {
  return params.w_read.size() + params.b_read.size() + params.w_compose.size() +
         params.b_compose.size() + params.w_scale.size();
}

UnitForward mbaf_unit_forward(const MbafParams& params, const MemoryState& mem,
                              std::span<const DenseVector> batch_x,
                              std::span<const DenseVector> batch_query) {
  const std::size_t d = params.dim();
  require(mem.dim == d, "mbaf forward: memory width " + str(mem.dim) + " vs params " + str(d));
  check_batch(batch_x, d, "mbaf forward inputs");
  const bool own_query = batch_query.empty();
  if (!own_query) {
    require(batch_query.size() == batch_x.size(), "mbaf forward: query batch size mismatch");
    check_batch(batch_query, d, "mbaf forward queries");
  }

  const std::size_t batch = batch_x.size();
  UnitForward out;
  out.trace.steps.resize(batch);
  out.outputs.resize(batch);
#pragma omp parallel for schedule(static) if (batch > 1)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(batch); ++n) {
    StepTrace& s = out.trace.steps[n];
    s.x = batch_x[n];
    s.query = own_query ? batch_x[n] : batch_query[n];
    s.z = read_key(params, s.x, mem);
    s.m_read = read_slot(s.z, mem);
    s.pre_mlp = concat(s.query, s.m_read);
    Composition comp = compose(params, s.query, s.m_read);
    s.b = std::move(comp.b);
    s.alpha = std::move(comp.alpha);
    s.c = std::move(comp.c);
    s.h = transform(params, s.c);
    s.o = fuse_output(s.x, s.h);
    out.outputs[n] = s.o;
  }

  std::vector<DenseVector> zs, hs;
  zs.reserve(batch);
  hs.reserve(batch);
  for (const auto& s : out.trace.steps) {
    zs.push_back(s.z);
    hs.push_back(s.h);
  }
  out.memory = write_memory(mem, zs, hs);
  return out;
}

UnitBackward mbaf_unit_backward(const MbafParams& params, const ForwardTrace& trace,
                                const MemoryState& mem_prev,
                                std::span<const DenseVector> batch_grad_o,
                                bool separate_query) {
  const std::size_t d = params.dim();
  const std::size_t batch = trace.steps.size();
  require(batch == batch_grad_o.size(),
          "mbaf backward: trace has " + str(batch) + " steps, got " +
              str(batch_grad_o.size()) + " output gradients");
  require(mem_prev.dim == d, "mbaf backward: memory width mismatch");
  for (std::size_t n = 0; n < batch; ++n) {
    require(batch_grad_o[n].size() == d && trace.steps[n].x.size() == d &&
                trace.steps[n].z.size() == mem_prev.slots,
            "mbaf backward: trace/gradient shape mismatch at example " + str(n));
  }

  // Per-example cotangents; weight gradients are reduced afterwards in a
  // fixed order so the result is independent of the thread count.
  std::vector<DenseVector> g_b(batch), g_q(batch), g_scale(batch);
  UnitBackward out;
  out.grad_x.resize(batch);
  if (separate_query) out.grad_query.resize(batch);

#pragma omp parallel for schedule(static) if (batch > 1)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(batch); ++n) {
    const StepTrace& s = trace.steps[n];
    const DenseVector& g_o = batch_grad_o[n];

    DenseVector g_pre(d);
    for (std::size_t i = 0; i < d; ++i) {
      g_pre[i] = s.c[i] * params.w_scale[i] > 0.0 ? g_o[i] : 0.0;
    }
    g_scale[n] = hadamard(g_pre, s.c);
    DenseVector g_c = hadamard(g_pre, params.w_scale);

    // c = alpha * b: both branches.
    DenseVector g_alpha = hadamard(g_c, s.b);
    DenseVector gb = hadamard(g_c, s.alpha);
    axpy(1.0, softmax_backward(s.alpha, g_alpha), gb.span());

    DenseVector g_joined = matvec(params.w_compose, gb);
    g_b[n] = std::move(gb);

    DenseVector g_mread = slice(g_joined, d, d);
    DenseVector g_z = matvec(mem_prev.M, g_mread);
    DenseVector g_scores = softmax_backward(s.z, g_z);
    DenseVector gq = matvec_t(mem_prev.M, g_scores);

    DenseVector g_x = g_o;
    axpy(1.0, matvec(params.w_read, gq), g_x.span());
    DenseVector g_query = slice(g_joined, 0, d);
    if (separate_query) {
      out.grad_query[n] = std::move(g_query);
    } else {
      axpy(1.0, g_query, g_x.span());
    }
    out.grad_x[n] = std::move(g_x);
    g_q[n] = std::move(gq);
  }

  out.grads = MbafGrads::zeros_like(params);
  std::vector<DenseVector> xs, joined;
  xs.reserve(batch);
  joined.reserve(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    xs.push_back(trace.steps[n].x);
    joined.push_back(trace.steps[n].pre_mlp);
    axpy(1.0, g_q[n], out.grads.b_read.span());
    axpy(1.0, g_b[n], out.grads.b_compose.span());
    axpy(1.0, g_scale[n], out.grads.w_scale.span());
  }
  outer_accumulate_batch(out.grads.w_read, xs, g_q);
  outer_accumulate_batch(out.grads.w_compose, joined, g_b);
  return out;
}

FusionVariant FusionVariant::single_mode(int mode) {
  if (mode != 1 && mode != 2) throw ParamError("single-mode variant: mode must be 1 or 2");
  return {FusionKind::mbaf_single_mode, mode, 0};
}

FusionVariant FusionVariant::resampled(std::size_t d_out) {
  if (d_out == 0) throw ParamError("resampled variant: d_out must be >= 1");
  return {FusionKind::mbaf_resampled, 1, d_out};
}

FusionVariant parse_variant(const std::string& text) {
  if (text == "nf" || text == "naive") return FusionVariant::naive();
  if (text == "na") return FusionVariant::naive_attention();
  if (text == "ca") return FusionVariant::cross_attention();
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    const std::string arg = text.substr(colon + 1);
    std::size_t used = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == arg.size() && !arg.empty()) {
      if (head == "single") return FusionVariant::single_mode(static_cast<int>(value));
      if (head == "resampled") return FusionVariant::resampled(value);
    }
  }
  throw ParamError("unknown fusion variant '" + text +
                   "' (expected nf, na, ca, single:<1|2>, resampled:<d_out>)");
}

std::string to_string(const FusionVariant& v) {
  switch (v.kind) {
    case FusionKind::naive_fusion:
      return "nf";
    case FusionKind::mbaf_naive_attention:
      return "na";
    case FusionKind::mbaf_cross_attention:
      return "ca";
    case FusionKind::mbaf_single_mode:
      return "single:" + std::to_string(v.mode_index);
    case FusionKind::mbaf_resampled:
      return "resampled:" + std::to_string(v.d_out);
  }
  return "?";
}

std::size_t FusionLayer::unit_dim() const {
  if (variant.kind == FusionKind::mbaf_single_mode) return variant.mode_index == 1 ? s1 : s2;
  return s1 + s2;
}

std::size_t FusionLayer::output_dim() const {
  return variant.kind == FusionKind::mbaf_resampled ? variant.d_out : s1 + s2;
}

FusionLayer make_fusion_layer(const FusionVariant& variant, std::size_t s1, std::size_t s2,
                              Rng& rng) {
  if (s1 == 0 || s2 == 0) throw ParamError("fusion layer: mode widths must be >= 1");
  if (variant.kind == FusionKind::mbaf_single_mode && variant.mode_index != 1 &&
      variant.mode_index != 2) {
    throw ParamError("fusion layer: single-mode index must be 1 or 2");
  }
  if (variant.kind == FusionKind::mbaf_resampled && variant.d_out == 0) {
    throw ParamError("fusion layer: resampled d_out must be >= 1");
  }
  FusionLayer layer;
  layer.variant = variant;
  layer.s1 = s1;
  layer.s2 = s2;
  if (!variant.has_memory()) return layer;
  const std::size_t d = layer.unit_dim();
  layer.unit = init_params(rng, d);
  if (variant.kind == FusionKind::mbaf_resampled) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    layer.projection = rng_uniform_matrix(rng, d, variant.d_out, -bound, bound);
  }
  return layer;
}

MemoryState make_memory(const FusionLayer& layer, std::size_t slots, Rng& rng) {
  if (!layer.variant.has_memory()) return MemoryState{};
  return memory_init(rng, slots, layer.unit_dim());
}

std::vector<NamedBlock> blocks(FusionLayer& layer) {
  std::vector<NamedBlock> out;
  if (!layer.variant.has_memory()) return out;
  out = blocks(layer.unit, "fusion.");
  if (layer.variant.kind == FusionKind::mbaf_resampled) {
    out.push_back({"fusion.projection", layer.projection.span()});
  }
  return out;
}

std::vector<NamedBlock> blocks(FusionGrads& grads, const FusionLayer& layer) {
  std::vector<NamedBlock> out;
  if (!layer.variant.has_memory()) return out;
  out = blocks(grads.unit, "fusion.");
  if (layer.variant.kind == FusionKind::mbaf_resampled) {
    out.push_back({"fusion.projection", grads.projection.span()});
  }
  return out;
}

FusionGrads zero_grads(const FusionLayer& layer) {
  FusionGrads g;
  if (!layer.variant.has_memory()) return g;
  g.unit = MbafGrads::zeros_like(layer.unit);
  if (layer.variant.kind == FusionKind::mbaf_resampled) {
    g.projection = DenseMatrix(layer.projection.rows(), layer.projection.cols());
  }
  return g;
}

LayerForward mbaf_forward(const FusionLayer& layer, const MemoryState& mem,
                          std::span<const DenseVector> batch_m1,
                          std::span<const DenseVector> batch_m2) {
  require(batch_m1.size() == batch_m2.size(),
          "mbaf_forward: batch sizes " + str(batch_m1.size()) + " vs " + str(batch_m2.size()));
  check_batch(batch_m1, layer.s1, "mbaf_forward mode 1");
  check_batch(batch_m2, layer.s2, "mbaf_forward mode 2");
  const std::size_t batch = batch_m1.size();

  LayerForward out;
  const FusionKind kind = layer.variant.kind;
  if (kind == FusionKind::naive_fusion) {
    out.outputs = naive_fusion(batch_m1, batch_m2);
    out.memory = mem;
    return out;
  }
  require(mem.dim == layer.unit_dim(),
          "mbaf_forward: memory width " + str(mem.dim) + ", unit width " +
              str(layer.unit_dim()));

  if (kind == FusionKind::mbaf_single_mode) {
    const bool first = layer.variant.mode_index == 1;
    UnitForward unit = mbaf_unit_forward(layer.unit, mem, first ? batch_m1 : batch_m2);
    out.outputs.reserve(batch);
    for (std::size_t n = 0; n < batch; ++n) {
      out.outputs.push_back(first ? concat(unit.outputs[n], batch_m2[n])
                                  : concat(batch_m1[n], unit.outputs[n]));
    }
    out.trace.unit = std::move(unit.trace);
    out.memory = std::move(unit.memory);
    return out;
  }

  std::vector<DenseVector> xs = naive_fusion(batch_m1, batch_m2);
  std::vector<DenseVector> queries;
  if (kind == FusionKind::mbaf_cross_attention) {
    queries.reserve(batch);
    for (std::size_t n = 0; n < batch; ++n) queries.push_back(swap_concat(batch_m1[n], batch_m2[n]));
  }
  UnitForward unit = mbaf_unit_forward(layer.unit, mem, xs, queries);
  out.trace.unit = std::move(unit.trace);
  out.memory = std::move(unit.memory);
  if (kind == FusionKind::mbaf_resampled) {
    out.trace.pre_resample = unit.outputs;
    out.outputs.resize(batch);
#pragma omp parallel for schedule(static) if (batch > 1)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(batch); ++n) {
      out.outputs[n] = resample_output(unit.outputs[n], layer.projection);
    }
  } else {
    out.outputs = std::move(unit.outputs);
  }
  return out;
}

LayerBackward mbaf_backward(const FusionLayer& layer, const LayerTrace& trace,
                            const MemoryState& mem_prev,
                            std::span<const DenseVector> batch_grad_o) {
  const std::size_t s1 = layer.s1, s2 = layer.s2;
  const std::size_t batch = batch_grad_o.size();
  check_batch(batch_grad_o, layer.output_dim(), "mbaf_backward output gradients");

  LayerBackward out;
  out.grads = zero_grads(layer);
  out.grad_m1.reserve(batch);
  out.grad_m2.reserve(batch);
  const FusionKind kind = layer.variant.kind;

  if (kind == FusionKind::naive_fusion) {
    for (const auto& g : batch_grad_o) {
      out.grad_m1.push_back(slice(g, 0, s1));
      out.grad_m2.push_back(slice(g, s1, s2));
    }
    return out;
  }

  if (kind == FusionKind::mbaf_single_mode) {
    const bool first = layer.variant.mode_index == 1;
    std::vector<DenseVector> g_unit;
    g_unit.reserve(batch);
    for (const auto& g : batch_grad_o) g_unit.push_back(first ? slice(g, 0, s1) : slice(g, s1, s2));
    UnitBackward unit = mbaf_unit_backward(layer.unit, trace.unit, mem_prev, g_unit);
    out.grads.unit = std::move(unit.grads);
    for (std::size_t n = 0; n < batch; ++n) {
      if (first) {
        out.grad_m1.push_back(std::move(unit.grad_x[n]));
        out.grad_m2.push_back(slice(batch_grad_o[n], s1, s2));
      } else {
        out.grad_m1.push_back(slice(batch_grad_o[n], 0, s1));
        out.grad_m2.push_back(std::move(unit.grad_x[n]));
      }
    }
    return out;
  }

  std::vector<DenseVector> g_o(batch_grad_o.begin(), batch_grad_o.end());
  if (kind == FusionKind::mbaf_resampled) {
    require(trace.pre_resample.size() == batch, "mbaf_backward: missing resample trace");
    outer_accumulate_batch(out.grads.projection, trace.pre_resample, g_o);
    for (std::size_t n = 0; n < batch; ++n) g_o[n] = matvec(layer.projection, batch_grad_o[n]);
  }

  const bool cross = kind == FusionKind::mbaf_cross_attention;
  UnitBackward unit = mbaf_unit_backward(layer.unit, trace.unit, mem_prev, g_o, cross);
  out.grads.unit = std::move(unit.grads);
  for (std::size_t n = 0; n < batch; ++n) {
    DenseVector& gx = unit.grad_x[n];
    if (cross) {
      // query = m2 (+) m1
      const DenseVector& gq = unit.grad_query[n];
      for (std::size_t i = 0; i < s1; ++i) gx[i] += gq[s2 + i];
      for (std::size_t i = 0; i < s2; ++i) gx[s1 + i] += gq[i];
    }
    out.grad_m1.push_back(slice(gx, 0, s1));
    out.grad_m2.push_back(slice(gx, s1, s2));
  }
  return out;
}

}  // namespace mbaf
