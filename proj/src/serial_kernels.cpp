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

#include "mbaf/serial_kernels.hpp"

#include <algorithm>
#include <cmath>

namespace mbaf::serial {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("serial::matmul: dimension mismatch");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
  return c;
}

DenseVector matvec_t(const DenseMatrix& w, std::span<const double> x) {
  if (w.rows() != x.size()) throw ShapeError("serial::matvec_t: dimension mismatch");
  DenseVector y(w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) y[j] += w(i, j) * x[i];
  return y;
}

DenseVector matvec(const DenseMatrix& w, std::span<const double> v) {
  if (w.cols() != v.size()) throw ShapeError("serial::matvec: dimension mismatch");
  DenseVector y(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) acc += w(i, j) * v[j];
    y[i] = acc;
  }
  return y;
}

DenseMatrix outer(std::span<const double> u, std::span<const double> v) {
  DenseMatrix m(u.size(), v.size());
  serial::outer_accumulate(m, u, v);
  return m;
}

void outer_accumulate(DenseMatrix& g, std::span<const double> u, std::span<const double> v) {
  if (g.rows() != u.size() || g.cols() != v.size())
    throw ShapeError("serial::outer: dimension mismatch");
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) g(i, j) += u[i] * v[j];
}

void outer_accumulate_batch(DenseMatrix& g, std::span<const DenseVector> us,
                            std::span<const DenseVector> vs) {
  if (us.size() != vs.size()) throw ShapeError("serial::outer_accumulate_batch: batch mismatch");
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t n = 0; n < us.size(); ++n)
      for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += us[n][i] * vs[n][j];
}

DenseVector softmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("serial::softmax: empty vector");
  const double peak = *std::max_element(v.begin(), v.end());
  DenseVector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] /= total;
  return out;
}

DenseVector relu(std::span<const double> v) {
  DenseVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i], 0.0);
  return out;
}

DenseVector hadamard(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("serial::hadamard: length mismatch");
  DenseVector out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] * v[i];
  return out;
}

}  // namespace mbaf::serial
