// Copyright 2026 The sq Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sq/matrix.hpp"

// Hot loops of the toolkit. Every kernel in sq::kernels is OpenMP-parallel
// over an axis whose elements are computed independently, so its result is
// bit-identical to the serial version in sq::reference regardless of thread
// count. The reference versions are kept for tests and benchmarks.

namespace sq::kernels {

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

/// Per-column max |x| (activation channel salience for one batch).
template <typename T>
std::vector<double> column_abs_max(const Matrix<T>& m);

/// Per-row max |w| (weight input-channel salience).
template <typename T>
std::vector<double> row_abs_max(const Matrix<T>& m);

/// codes[i] = clamp(rint(x[i] / delta[g]) + zero_point[g], 0, qmax) where g is
/// 0 when per_column is false and the column index otherwise.
template <typename T>
void quantize_codes(std::span<const T> x, std::size_t cols, bool per_column,
                    std::span<const double> delta, std::span<const std::int32_t> zero_point,
                    std::int32_t qmax, std::span<std::int32_t> codes);

}  // namespace sq::kernels

namespace sq::reference {

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
std::vector<double> column_abs_max(const Matrix<T>& m);

template <typename T>
std::vector<double> row_abs_max(const Matrix<T>& m);

template <typename T>
void quantize_codes(std::span<const T> x, std::size_t cols, bool per_column,
                    std::span<const double> delta, std::span<const std::int32_t> zero_point,
                    std::int32_t qmax, std::span<std::int32_t> codes);

}  // namespace sq::reference
