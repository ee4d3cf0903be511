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

#include <span>
#include <utility>
#include <vector>

#include "sq/matrix.hpp"

namespace sq {

/// Floor applied to saliences before they appear in a denominator.
inline constexpr double kSalienceEps = 1e-5;

/// Per-input-channel max |.|, one entry per channel, all >= 0.
class SalienceVector {
 public:
  SalienceVector() = default;
  explicit SalienceVector(std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t j) const noexcept { return values_[j]; }
  std::span<const double> values() const noexcept { return values_; }

  bool operator==(const SalienceVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Diagonals of the activation-side (bx) and weight-side (bw) balancing
/// matrices. Kept as vectors; the dense diagonal form is never built.
struct BalancingPair {
  std::vector<double> bx;
  std::vector<double> bw;

  std::size_t size() const noexcept { return bx.size(); }
  static BalancingPair identity(std::size_t channels);
  /// max_j |bx[j] * bw[j] - 1|
  double max_inverse_error() const;
  /// Swaps the roles, giving the pair that undoes this one.
  BalancingPair inverse() const { return {bw, bx}; }

  bool operator==(const BalancingPair&) const = default;
};

/// Pooled max over every sample and token of each column.
template <typename T>
SalienceVector activation_salience(std::span<const Matrix<T>> batch);

/// Max over output channels for each weight row (input channel) of a d_in x d_out weight.
template <typename T>
SalienceVector weight_salience(const Matrix<T>& w);

/// Channel-wise geometric mean sqrt(sx * sw).
SalienceVector balanced_salience(const SalienceVector& sx, const SalienceVector& sw);

/// bx = sqrt(sw'/sx'), bw = sqrt(sx'/sw') with both saliences floored at eps.
BalancingPair build_balancing(const SalienceVector& sx, const SalienceVector& sw,
                              double eps = kSalienceEps);

/// X * diag(bx) and diag(bw) * W; the product is unchanged up to rounding.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> apply_balancing(const Matrix<T>& x, const Matrix<T>& w,
                                                const BalancingPair& pair);

/// Column scaling X * diag(bx) on its own.
template <typename T>
Matrix<T> scale_columns(const Matrix<T>& x, std::span<const double> scale);

/// Row scaling diag(bw) * W on its own.
template <typename T>
Matrix<T> scale_rows(const Matrix<T>& w, std::span<const double> scale);

double overall_salience(const SalienceVector& s);

}  // namespace sq
