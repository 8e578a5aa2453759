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

// Single-threaded reference kernels. Kept for tests and the benchmark; the
// library itself calls the parallel versions in numcore.hpp.

#pragma once

#include <span>

#include "mbaf/numcore.hpp"

namespace mbaf::serial {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseVector matvec_t(const DenseMatrix& w, std::span<const double> x);
DenseVector matvec(const DenseMatrix& w, std::span<const double> v);
DenseMatrix outer(std::span<const double> u, std::span<const double> v);
void outer_accumulate(DenseMatrix& g, std::span<const double> u, std::span<const double> v);
void outer_accumulate_batch(DenseMatrix& g, std::span<const DenseVector> us,
                            std::span<const DenseVector> vs);
DenseVector softmax(std::span<const double> v);
DenseVector relu(std::span<const double> v);
DenseVector hadamard(std::span<const double> u, std::span<const double> v);

}  // namespace mbaf::serial
