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

#include "sq/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sq {
namespace {

template <typename T>
void check_matmul_shapes(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw Error(Errc::ShapeMismatch, "matmul inner dimensions differ");
  }
}

inline std::int32_t code_of(double x, double delta, std::int32_t zero_point, std::int32_t qmax) {
  // Clamp in double first: x / delta can exceed the int32 range.
  const double q = std::nearbyint(x / delta) + static_cast<double>(zero_point);
  return static_cast<std::int32_t>(std::clamp(q, 0.0, static_cast<double>(qmax)));
}

}  // namespace

namespace kernels {

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  check_matmul_shapes(a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix<T> c(n, m);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    T* crow = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = pa[i * k + p];
      const T* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

template <typename T>
std::vector<double> column_abs_max(const Matrix<T>& m) {
  // Row blocks keep reads contiguous; max is exact under any merge order.
  std::vector<double> out(m.cols(), 0.0);
#pragma omp parallel
  {
    std::vector<double> local(m.cols(), 0.0);
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m.rows()); ++i) {
      const auto r = m.row(static_cast<std::size_t>(i));
      for (std::size_t j = 0; j < r.size(); ++j) local[j] = std::max(local[j], std::abs(static_cast<double>(r[j])));
    }
#pragma omp critical
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], local[j]);
  }
  return out;
}

template <typename T>
std::vector<double> row_abs_max(const Matrix<T>& m) {
  std::vector<double> out(m.rows(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m.rows()); ++i) {
    double best = 0.0;
    for (const T v : m.row(i)) best = std::max(best, std::abs(static_cast<double>(v)));
    out[i] = best;
  }
  return out;
}

template <typename T>
void quantize_codes(std::span<const T> x, std::size_t cols, bool per_column,
                    std::span<const double> delta, std::span<const std::int32_t> zero_point,
                    std::int32_t qmax, std::span<std::int32_t> codes) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x.size()); ++i) {
    const std::size_t g = per_column ? static_cast<std::size_t>(i) % cols : 0;
    codes[i] = code_of(static_cast<double>(x[i]), delta[g], zero_point[g], qmax);
  }
}

}  // namespace kernels

namespace reference {

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  check_matmul_shapes(a, b);
  Matrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T acc{};
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  }
  return c;
}

template <typename T>
std::vector<double> column_abs_max(const Matrix<T>& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      out[j] = std::max(out[j], std::abs(static_cast<double>(m(i, j))));
    }
  }
  return out;
}

template <typename T>
std::vector<double> row_abs_max(const Matrix<T>& m) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      out[i] = std::max(out[i], std::abs(static_cast<double>(m(i, j))));
    }
  }
  return out;
}

template <typename T>
void quantize_codes(std::span<const T> x, std::size_t cols, bool per_column,
                    std::span<const double> delta, std::span<const std::int32_t> zero_point,
                    std::int32_t qmax, std::span<std::int32_t> codes) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t g = per_column ? i % cols : 0;
    codes[i] = code_of(static_cast<double>(x[i]), delta[g], zero_point[g], qmax);
  }
}

}  // namespace reference

#define SQ_INSTANTIATE_KERNELS(NS, T)                                                        \
  template Matrix<T> NS::matmul<T>(const Matrix<T>&, const Matrix<T>&);                      \
  template std::vector<double> NS::column_abs_max<T>(const Matrix<T>&);                      \
  template std::vector<double> NS::row_abs_max<T>(const Matrix<T>&);                         \
  template void NS::quantize_codes<T>(std::span<const T>, std::size_t, bool,                 \
                                      std::span<const double>, std::span<const std::int32_t>, \
                                      std::int32_t, std::span<std::int32_t>);

SQ_INSTANTIATE_KERNELS(kernels, float)
SQ_INSTANTIATE_KERNELS(kernels, double)
SQ_INSTANTIATE_KERNELS(reference, float)
SQ_INSTANTIATE_KERNELS(reference, double)

}  // namespace sq
