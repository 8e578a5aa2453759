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

// Dense 64-bit kernels shared by every other module.
//
// The free functions in namespace mbaf are the OpenMP-parallel kernels used
// on the hot path. Each one has a plain-loop twin in mbaf::serial (see
// serial_kernels.hpp) with the same per-element summation order, so the two
// agree bit-for-bit regardless of thread count.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "mbaf/errors.hpp"

namespace mbaf {

class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  DenseVector(std::initializer_list<double> values) : data_(values) {}
  explicit DenseVector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const DenseVector&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major rows x cols matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Counter-based generator: draw n is splitmix64(seed + n * golden_gamma).
// Uniform doubles take the top 53 bits. Normals use the Box-Muller transform
// on two uniforms, u1 in (0,1] and u2 in [0,1), emitting the cosine branch
// first and caching the sine branch for the next call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();
  // [0, 1)
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

DenseVector rng_normal(Rng& rng, std::size_t n, double mu, double sigma);
DenseVector rng_uniform(Rng& rng, std::size_t n, double lo, double hi);
DenseMatrix rng_normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double mu,
                              double sigma);
DenseMatrix rng_uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo,
                               double hi);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// y = W^T x, the layout every weight in this project uses (W is in x out).
DenseVector matvec_t(const DenseMatrix& w, std::span<const double> x);
// y = W v
DenseVector matvec(const DenseMatrix& w, std::span<const double> v);
DenseMatrix outer(std::span<const double> u, std::span<const double> v);
// g += u (x) v
void outer_accumulate(DenseMatrix& g, std::span<const double> u, std::span<const double> v);
// g += sum_n us[n] (x) vs[n], summed in ascending n for every entry.
void outer_accumulate_batch(DenseMatrix& g, std::span<const DenseVector> us,
                            std::span<const DenseVector> vs);

DenseVector softmax(std::span<const double> v);
DenseVector relu(std::span<const double> v);
DenseVector hadamard(std::span<const double> u, std::span<const double> v);
DenseVector concat(std::span<const double> u, std::span<const double> v);
DenseVector add(std::span<const double> u, std::span<const double> v);
double dot(std::span<const double> u, std::span<const double> v);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

// Vector-Jacobian product of softmax given its output p: p * (g - <g, p>).
DenseVector softmax_backward(std::span<const double> p, std::span<const double> g);

bool all_finite(std::span<const double> v);

}  // namespace mbaf
