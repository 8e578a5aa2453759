// Straight-line scalar re-implementation of the MBAF forward pass and write
// rule, written against plain nested std::vector so it shares no kernels with
// the library.

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, Mat[r][c]

struct Params {
  Mat w_read;     // d x d, applied as W^T x
  Vec b_read;     // d
  Mat w_compose;  // 2d x d
  Vec b_compose;  // d
  Vec w_scale;    // d
};

struct Step {
  Vec x, query, q, scores, z, m_read, joined, b, alpha, c, h, o;
};

inline Vec softmax(const Vec& v) {
  double peak = v[0];
  for (double x : v) peak = x > peak ? x : peak;
  Vec e(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(v[i] - peak);
    total += e[i];
  }
  for (double& x : e) x /= total;
  return e;
}

inline Step step(const Params& p, const Mat& memory, const Vec& m1, const Vec& m2,
                 bool cross_attention) {
  Step s;
  const std::size_t d = m1.size() + m2.size();
  const std::size_t k = memory.size();
  for (double v : m1) s.x.push_back(v);
  for (double v : m2) s.x.push_back(v);
  if (cross_attention) {
    for (double v : m2) s.query.push_back(v);
    for (double v : m1) s.query.push_back(v);
  } else {
    s.query = s.x;
  }

  s.q.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = p.b_read[j];
    for (std::size_t i = 0; i < d; ++i) acc += p.w_read[i][j] * s.x[i];
    s.q[j] = acc;
  }
  s.scores.assign(k, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += s.q[i] * memory[r][i];
    s.scores[r] = acc;
  }
  s.z = softmax(s.scores);
  s.m_read.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t r = 0; r < k; ++r) acc += s.z[r] * memory[r][i];
    s.m_read[i] = acc;
  }
  s.joined = s.query;
  for (double v : s.m_read) s.joined.push_back(v);
  s.b.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = p.b_compose[j];
    for (std::size_t i = 0; i < 2 * d; ++i) acc += p.w_compose[i][j] * s.joined[i];
    s.b[j] = acc;
  }
  s.alpha = softmax(s.b);
  s.c.assign(d, 0.0);
  s.h.assign(d, 0.0);
  s.o.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    s.c[i] = s.alpha[i] * s.b[i];
    const double t = s.c[i] * p.w_scale[i];
    s.h[i] = t > 0.0 ? t : 0.0;
    s.o[i] = s.x[i] + s.h[i];
  }
  return s;
}

// Per-row blend with batch-mean erase and add.
inline Mat write(const Mat& memory, const std::vector<Vec>& zs, const std::vector<Vec>& hs) {
  Mat out = memory;
  const double n = static_cast<double>(zs.size());
  for (std::size_t r = 0; r < memory.size(); ++r) {
    double z_bar = 0.0;
    for (const auto& z : zs) z_bar += z[r];
    z_bar /= n;
    for (std::size_t i = 0; i < memory[r].size(); ++i) {
      double add = 0.0;
      for (std::size_t b = 0; b < zs.size(); ++b) add += zs[b][r] * hs[b][i];
      out[r][i] = memory[r][i] * (1.0 - z_bar) + add / n;
    }
  }
  return out;
}

}  // namespace oracle
