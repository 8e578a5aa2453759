// Scalar-generic re-evaluation of the fusion layer and classifier losses,
// used by the finite-difference checks to evaluate the loss in extended
// precision. Private to the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <quadmath.h>

#include "mbaf/fusion.hpp"
#include "mbaf/model.hpp"

namespace mbaf::detail {

template <typename T>
using Vec = std::vector<T>;

inline double exp_of(double x) { return std::exp(x); }
inline double log_of(double x) { return std::log(x); }
inline long double exp_of(long double x) { return std::exp(x); }
inline long double log_of(long double x) { return std::log(x); }
inline __float128 exp_of(__float128 x) { return expq(x); }
inline __float128 log_of(__float128 x) { return logq(x); }

template <typename T>
Vec<T> widen(std::span<const double> v) {
  return Vec<T>(v.begin(), v.end());
}

// y = W^T x + b with W stored fan_in x fan_out, row-major.
template <typename T>
Vec<T> affine(const Vec<T>& w, const Vec<T>& b, const Vec<T>& x) {
  const std::size_t out = b.size();
  Vec<T> y(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < out; ++j) y[j] += w[i * out + j] * x[i];
  return y;
}

template <typename T>
Vec<T> softmax_of(const Vec<T>& v) {
  const T peak = *std::max_element(v.begin(), v.end());
  Vec<T> out(v.size());
  T total = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = exp_of(v[i] - peak);
    total += out[i];
  }
  for (T& x : out) x /= total;
  return out;
}

template <typename T>
void relu_in_place(Vec<T>& v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

template <typename T>
Vec<T> join(const Vec<T>& a, const Vec<T>& b) {
  Vec<T> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

template <typename T>
struct PreciseLayer {
  FusionVariant variant;
  std::size_t s1 = 0, s2 = 0, d = 0, slots = 0;
  Vec<T> w_read, b_read, w_compose, b_compose, w_scale, projection, memory;

  PreciseLayer(const FusionLayer& layer, const MemoryState& mem)
      : variant(layer.variant), s1(layer.s1), s2(layer.s2) {
    if (!variant.has_memory()) return;
    d = layer.unit_dim();
    slots = mem.slots;
    w_read = widen<T>(layer.unit.w_read.span());
    b_read = widen<T>(layer.unit.b_read.span());
    w_compose = widen<T>(layer.unit.w_compose.span());
    b_compose = widen<T>(layer.unit.b_compose.span());
    w_scale = widen<T>(layer.unit.w_scale.span());
    projection = widen<T>(layer.projection.span());
    memory = widen<T>(mem.M.span());
  }

  // Same order as blocks(FusionLayer&).
  std::vector<Vec<T>*> blocks() {
    if (!variant.has_memory()) return {};
    std::vector<Vec<T>*> out{&w_read, &b_read, &w_compose, &b_compose, &w_scale};
    if (variant.kind == FusionKind::mbaf_resampled) out.push_back(&projection);
    return out;
  }

  Vec<T> unit(const Vec<T>& x, const Vec<T>& query) const {
    const Vec<T> q = affine(w_read, b_read, x);
    Vec<T> scores(slots, T(0));
    for (std::size_t j = 0; j < slots; ++j)
      for (std::size_t i = 0; i < d; ++i) scores[j] += q[i] * memory[j * d + i];
    const Vec<T> z = softmax_of(scores);
    Vec<T> m_read(d, T(0));
    for (std::size_t j = 0; j < slots; ++j)
      for (std::size_t i = 0; i < d; ++i) m_read[i] += z[j] * memory[j * d + i];
    const Vec<T> b = affine(w_compose, b_compose, join(query, m_read));
    const Vec<T> alpha = softmax_of(b);
    Vec<T> o(x);
    for (std::size_t i = 0; i < d; ++i) {
      const T h = alpha[i] * b[i] * w_scale[i];
      if (h > T(0)) o[i] += h;
    }
    return o;
  }

  Vec<T> forward(const Vec<T>& m1, const Vec<T>& m2) const {
    switch (variant.kind) {
      case FusionKind::naive_fusion:
        return join(m1, m2);
      case FusionKind::mbaf_single_mode:
        return variant.mode_index == 1 ? join(unit(m1, m1), m2) : join(m1, unit(m2, m2));
      case FusionKind::mbaf_cross_attention:
        return unit(join(m1, m2), join(m2, m1));
      case FusionKind::mbaf_resampled: {
        const Vec<T> o = unit(join(m1, m2), join(m1, m2));
        const std::size_t out = variant.d_out;
        Vec<T> y(out, T(0));
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < out; ++j) y[j] += projection[i * out + j] * o[i];
        return y;
      }
      case FusionKind::mbaf_naive_attention:
        break;
    }
    const Vec<T> x = join(m1, m2);
    return unit(x, x);
  }
};

template <typename T>
struct PreciseDense {
  Vec<T> w, b;
  explicit PreciseDense(const DenseLayer& layer)
      : w(widen<T>(layer.w.span())), b(widen<T>(layer.b.span())) {}
};

template <typename T>
struct PreciseClassifier {
  std::optional<PreciseDense<T>> encoder1, encoder2;
  PreciseLayer<T> fusion;
  PreciseDense<T> head_hidden, head_out;

  PreciseClassifier(const ClassifierParams& p, const MemoryState& mem)
      : fusion(p.fusion, mem), head_hidden(p.head_hidden), head_out(p.head_out) {
    if (p.encoder1) encoder1.emplace(*p.encoder1);
    if (p.encoder2) encoder2.emplace(*p.encoder2);
  }

  // Same order as blocks(ClassifierParams&).
  std::vector<Vec<T>*> blocks() {
    std::vector<Vec<T>*> out;
    for (auto* enc : {&encoder1, &encoder2}) {
      if (*enc) {
        out.push_back(&(*enc)->w);
        out.push_back(&(*enc)->b);
      }
    }
    for (auto* b : fusion.blocks()) out.push_back(b);
    for (auto* layer : {&head_hidden, &head_out}) {
      out.push_back(&layer->w);
      out.push_back(&layer->b);
    }
    return out;
  }

  // Mean cross-entropy over the batch.
  T loss(std::span<const Sample> batch, std::span<const DenseVector> masks) const {
    T total = 0;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      Vec<T> e1 = widen<T>(batch[n].m1), e2 = widen<T>(batch[n].m2);
      if (encoder1) {
        e1 = affine(encoder1->w, encoder1->b, e1);
        relu_in_place(e1);
      }
      if (encoder2) {
        e2 = affine(encoder2->w, encoder2->b, e2);
        relu_in_place(e2);
      }
      Vec<T> hidden = affine(head_hidden.w, head_hidden.b, fusion.forward(e1, e2));
      relu_in_place(hidden);
      if (!masks.empty())
        for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] *= T(masks[n][i]);
      const Vec<T> logits = affine(head_out.w, head_out.b, hidden);
      const T peak = *std::max_element(logits.begin(), logits.end());
      T norm = 0;
      for (const T& l : logits) norm += exp_of(l - peak);
      total += peak + log_of(norm) - logits[batch[n].label];
    }
    return total / T(batch.size());
  }
};

}  // namespace mbaf::detail
