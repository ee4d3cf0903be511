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

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sq/matrix.hpp"
#include "sq/quant.hpp"
#include "sq/salience.hpp"

namespace sq {

inline constexpr double kLayerNormEps = 1e-6;

/// Conditioning MLPs of an adaptive LayerNorm: gamma = c * w_gamma + b_gamma,
/// beta = c * w_beta + b_beta, with c of length d_c and outputs of length d_in.
template <typename T>
struct AdaLNParams {
  Matrix<T> w_gamma;
  Matrix<T> w_beta;
  std::vector<T> b_gamma;
  std::vector<T> b_beta;

  std::size_t cond_dim() const noexcept { return w_gamma.rows(); }
  std::size_t channels() const noexcept { return w_gamma.cols(); }
  void validate() const;

  bool operator==(const AdaLNParams&) const = default;
};

template <typename T>
struct ScaleShift {
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <typename T>
struct FoldedLinear {
  Matrix<T> w_tilde;
  std::vector<T> bias;
  BalancingPair provenance;
};

/// Per-token LayerNorm without affine terms.
template <typename T>
Matrix<T> layer_norm(const Matrix<T>& z, double eps = kLayerNormEps);

template <typename T>
ScaleShift<T> regress(const AdaLNParams<T>& p, std::span<const T> c);

/// LN(Z) * (1 + gamma) + beta.
template <typename T>
Matrix<T> adaln_forward(const Matrix<T>& z, const AdaLNParams<T>& p, std::span<const T> c);

/// Row-scales W by bw; the output-channel bias is carried over untouched.
template <typename T>
FoldedLinear<T> fold_weight(const Matrix<T>& w, std::span<const T> bias, const BalancingPair& pair);

/// Column-scales both regression MLPs (weights and biases) by bx.
template <typename T>
AdaLNParams<T> fold_adaln(const AdaLNParams<T>& p, const BalancingPair& pair);

/// LN(Z) * (bx + gamma~) + beta~ with (gamma~, beta~) regressed by folded MLPs;
/// equals adaln_forward(Z) * diag(bx).
template <typename T>
Matrix<T> balanced_adaln_forward(const Matrix<T>& z, const AdaLNParams<T>& folded,
                                 const BalancingPair& pair, std::span<const T> c);

/// delta'_j = delta_j * bx[j]. The upstream quantizer must be per channel.
QuantParams fold_dequant_scales(const QuantParams& p, const BalancingPair& pair);

struct EquivalenceReport {
  double max_deviation = 0.0;
  std::size_t worst_index = 0;
  double tolerance = 0.0;
  bool passed = true;
  std::vector<double> deviations;
};

/// ||a - b||_F / ||b||_F, or ||a||_F when b is all zeros.
template <typename T>
double relative_deviation(const Matrix<T>& a, const Matrix<T>& b);

template <typename Input, typename T = float>
EquivalenceReport verify_equivalence(const std::function<Matrix<T>(const Input&)>& original,
                                     const std::function<Matrix<T>(const Input&)>& folded,
                                     std::span<const Input> inputs, double tol) {
  EquivalenceReport r;
  r.tolerance = tol;
  r.deviations.resize(inputs.size());
  // Read-only over shared parameters; inputs are independent.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(inputs.size()); ++i) {
    r.deviations[i] = relative_deviation(folded(inputs[i]), original(inputs[i]));
  }
  r.passed = !inputs.empty();
  for (std::size_t i = 0; i < r.deviations.size(); ++i) {
    const double d = r.deviations[i];
    if (!std::isfinite(d) || d > tol) r.passed = false;
    if (i == 0 || !std::isfinite(d) || d > r.max_deviation) {
      if (std::isfinite(r.max_deviation) || i == 0) {
        r.max_deviation = d;
        r.worst_index = i;
      }
    }
  }
  return r;
}

}  // namespace sq
