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

#include "mbaf/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <omp.h>

namespace mbaf {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 15;
constexpr std::size_t kColumnBlock = 64;

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void require_same_length(std::span<const double> u, std::span<const double> v,
                         const char* op) {
  if (u.size() != v.size()) {
    throw ShapeError(std::string(op) + ": length mismatch " + std::to_string(u.size()) +
                     " vs " + std::to_string(v.size()));
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + dims(a.rows(), a.cols()) + " * " +
                     dims(b.rows(), b.cols()));
  }
  const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
  DenseMatrix c(n, m);
  const bool par = n * inner * m >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a(i, k);
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

DenseVector matvec_t(const DenseMatrix& w, std::span<const double> x) {
  if (w.rows() != x.size()) {
    throw ShapeError("matvec_t: W is " + dims(w.rows(), w.cols()) + ", x has " +
                     std::to_string(x.size()));
  }
  const std::size_t n_in = w.rows(), n_out = w.cols();
  DenseVector y(n_out);
  const std::size_t blocks = (n_out + kColumnBlock - 1) / kColumnBlock;
  const bool par = n_in * n_out >= kParallelWork && blocks > 1;
  // Column blocks keep the per-output summation order (ascending i) identical
  // to the serial loop.
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(blocks); ++blk) {
    const std::size_t j0 = blk * kColumnBlock;
    const std::size_t j1 = std::min(n_out, j0 + kColumnBlock);
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xi = x[i];
      const double* wi = w.row(i).data();
      for (std::size_t j = j0; j < j1; ++j) y[j] += wi[j] * xi;
    }
  }
  return y;
}

DenseVector matvec(const DenseMatrix& w, std::span<const double> v) {
  if (w.cols() != v.size()) {
    throw ShapeError("matvec: W is " + dims(w.rows(), w.cols()) + ", v has " +
                     std::to_string(v.size()));
  }
  DenseVector y(w.rows());
  const bool par = w.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(w.rows()); ++i) {
    const double* wi = w.row(i).data();
    double acc = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) acc += wi[j] * v[j];
    y[i] = acc;
  }
  return y;
}

DenseMatrix outer(std::span<const double> u, std::span<const double> v) {
  DenseMatrix m(u.size(), v.size());
  outer_accumulate(m, u, v);
  return m;
}

void outer_accumulate(DenseMatrix& g, std::span<const double> u, std::span<const double> v) {
  if (g.rows() != u.size() || g.cols() != v.size()) {
    throw ShapeError("outer: target " + dims(g.rows(), g.cols()) + " vs " +
                     dims(u.size(), v.size()));
  }
  const bool par = g.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(u.size()); ++i) {
    double* gi = g.row(i).data();
    const double ui = u[i];
    for (std::size_t j = 0; j < v.size(); ++j) gi[j] += ui * v[j];
  }
}

void outer_accumulate_batch(DenseMatrix& g, std::span<const DenseVector> us,
                            std::span<const DenseVector> vs) {
  if (us.size() != vs.size()) throw ShapeError("outer_accumulate_batch: batch mismatch");
  for (std::size_t n = 0; n < us.size(); ++n) {
    if (us[n].size() != g.rows() || vs[n].size() != g.cols()) {
      throw ShapeError("outer_accumulate_batch: target " + dims(g.rows(), g.cols()) +
                       " vs " + dims(us[n].size(), vs[n].size()));
    }
  }
  const bool par = g.size() * us.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(g.rows()); ++i) {
    double* gi = g.row(i).data();
    for (std::size_t n = 0; n < us.size(); ++n) {
      const double ui = us[n][i];
      const double* v = vs[n].data();
      for (std::size_t j = 0; j < g.cols(); ++j) gi[j] += ui * v[j];
    }
  }
}

DenseVector softmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("softmax: empty vector");
  const double peak = *std::max_element(v.begin(), v.end());
  DenseVector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

DenseVector softmax_backward(std::span<const double> p, std::span<const double> g) {
  require_same_length(p, g, "softmax_backward");
  const double inner = dot(p, g);
  DenseVector out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (g[i] - inner);
  return out;
}

DenseVector relu(std::span<const double> v) {
  DenseVector out(v.size());
  const bool par = v.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(v.size()); ++i) {
    out[i] = v[i] > 0.0 ? v[i] : 0.0;
  }
  return out;
}

DenseVector hadamard(std::span<const double> u, std::span<const double> v) {
  require_same_length(u, v, "hadamard");
  DenseVector out(u.size());
  const bool par = u.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(u.size()); ++i) {
    out[i] = u[i] * v[i];
  }
  return out;
}

DenseVector concat(std::span<const double> u, std::span<const double> v) {
  if (u.empty() || v.empty()) throw ShapeError("concat: empty operand");
  std::vector<double> out;
  out.reserve(u.size() + v.size());
  out.insert(out.end(), u.begin(), u.end());
  out.insert(out.end(), v.begin(), v.end());
  return DenseVector(std::move(out));
}

DenseVector add(std::span<const double> u, std::span<const double> v) {
  require_same_length(u, v, "add");
  DenseVector out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] + v[i];
  return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
  require_same_length(u, v, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace mbaf
