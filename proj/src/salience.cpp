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

#include "sq/salience.hpp"

#include <algorithm>
#include <cmath>

#include "sq/kernels.hpp"

namespace sq {

SalienceVector::SalienceVector(std::vector<double> values) : values_(std::move(values)) {
  for (const double v : values_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(Errc::InvalidParams, "salience entries must be finite and nonnegative");
    }
  }
}

BalancingPair BalancingPair::identity(std::size_t channels) {
  return {std::vector<double>(channels, 1.0), std::vector<double>(channels, 1.0)};
}

double BalancingPair::max_inverse_error() const {
  if (bx.size() != bw.size()) throw Error(Errc::ShapeMismatch, "bx and bw lengths differ");
  double worst = 0.0;
  for (std::size_t j = 0; j < bx.size(); ++j) worst = std::max(worst, std::abs(bx[j] * bw[j] - 1.0));
  return worst;
}

template <typename T>
SalienceVector activation_salience(std::span<const Matrix<T>> batch) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "activation batch is empty");
  const std::size_t d = batch.front().cols();
  std::vector<double> s(d, 0.0);
  for (const auto& x : batch) {
    if (x.cols() != d) throw Error(Errc::ShapeMismatch, "activation batch has mixed channel counts");
    const auto col = kernels::column_abs_max(x);
    for (std::size_t j = 0; j < d; ++j) s[j] = std::max(s[j], col[j]);
  }
  return SalienceVector(std::move(s));
}

template <typename T>
SalienceVector weight_salience(const Matrix<T>& w) {
  return SalienceVector(kernels::row_abs_max(w));
}

SalienceVector balanced_salience(const SalienceVector& sx, const SalienceVector& sw) {
  if (sx.size() != sw.size()) throw Error(Errc::ShapeMismatch, "salience lengths differ");
  std::vector<double> out(sx.size());
  for (std::size_t j = 0; j < sx.size(); ++j) out[j] = std::sqrt(sx[j] * sw[j]);
  return SalienceVector(std::move(out));
}

BalancingPair build_balancing(const SalienceVector& sx, const SalienceVector& sw, double eps) {
  if (sx.size() != sw.size()) throw Error(Errc::ShapeMismatch, "salience lengths differ");
  if (!(eps > 0.0)) throw Error(Errc::InvalidParams, "eps must be positive");
  BalancingPair pair{std::vector<double>(sx.size()), std::vector<double>(sx.size())};
  for (std::size_t j = 0; j < sx.size(); ++j) {
    const double x = std::max(sx[j], eps);
    const double w = std::max(sw[j], eps);
    pair.bx[j] = std::sqrt(w / x);
    pair.bw[j] = std::sqrt(x / w);
  }
  return pair;
}

template <typename T>
Matrix<T> scale_columns(const Matrix<T>& x, std::span<const double> scale) {
  if (x.cols() != scale.size()) throw Error(Errc::ShapeMismatch, "column scale length mismatch");
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = static_cast<T>(static_cast<double>(x(i, j)) * scale[j]);
    }
  }
  return out;
}

template <typename T>
Matrix<T> scale_rows(const Matrix<T>& w, std::span<const double> scale) {
  if (w.rows() != scale.size()) throw Error(Errc::ShapeMismatch, "row scale length mismatch");
  Matrix<T> out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      out(i, j) = static_cast<T>(static_cast<double>(w(i, j)) * scale[i]);
    }
  }
  return out;
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> apply_balancing(const Matrix<T>& x, const Matrix<T>& w,
                                                const BalancingPair& pair) {
  if (pair.bx.size() != pair.bw.size() || x.cols() != pair.size() || w.rows() != pair.size()) {
    throw Error(Errc::ShapeMismatch, "balancing pair does not match X columns / W rows");
  }
  return {scale_columns(x, pair.bx), scale_rows(w, pair.bw)};
}

double overall_salience(const SalienceVector& s) {
  if (s.size() == 0) throw Error(Errc::EmptyVector, "overall salience of an empty vector");
  return *std::max_element(s.values().begin(), s.values().end());
}

#define SQ_INSTANTIATE_SALIENCE(T)                                                       \
  template SalienceVector activation_salience<T>(std::span<const Matrix<T>>);            \
  template SalienceVector weight_salience<T>(const Matrix<T>&);                          \
  template std::pair<Matrix<T>, Matrix<T>> apply_balancing<T>(                           \
      const Matrix<T>&, const Matrix<T>&, const BalancingPair&);                         \
  template Matrix<T> scale_columns<T>(const Matrix<T>&, std::span<const double>);        \
  template Matrix<T> scale_rows<T>(const Matrix<T>&, std::span<const double>);

SQ_INSTANTIATE_SALIENCE(float)
SQ_INSTANTIATE_SALIENCE(double)

}  // namespace sq
