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

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mbaf/numcore.hpp"

namespace mbaf {

std::uint64_t Rng::next_u64() {
  // splitmix64 evaluated at position ++counter_.
  std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * ++counter_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ParamError("Rng::below: n must be positive");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

DenseVector rng_normal(Rng& rng, std::size_t n, double mu, double sigma) {
  if (!(sigma > 0.0)) throw ParamError("rng_normal: sigma must be > 0");
  DenseVector out(n);
  for (double& x : out) x = mu + sigma * rng.normal();
  return out;
}

DenseVector rng_uniform(Rng& rng, std::size_t n, double lo, double hi) {
  if (!(lo < hi)) throw ParamError("rng_uniform: need lo < hi");
  DenseVector out(n);
  const double width = hi - lo;
  for (double& x : out) {
    x = lo + width * rng.uniform();
    if (x >= hi) x = std::nextafter(hi, lo);
  }
  return out;
}

DenseMatrix rng_normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double mu,
                              double sigma) {
  DenseVector flat = rng_normal(rng, rows * cols, mu, sigma);
  DenseMatrix m(rows, cols);
  std::copy(flat.begin(), flat.end(), m.data());
  return m;
}

DenseMatrix rng_uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo,
                               double hi) {
  DenseVector flat = rng_uniform(rng, rows * cols, lo, hi);
  DenseMatrix m(rows, cols);
  std::copy(flat.begin(), flat.end(), m.data());
  return m;
}

}  // namespace mbaf
