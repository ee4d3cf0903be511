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

#include "sq/reparam.hpp"

#include <cmath>

namespace sq {

template <typename T>
void AdaLNParams<T>::validate() const {
  const std::size_t d = w_gamma.cols();
  if (w_beta.cols() != d || b_gamma.size() != d || b_beta.size() != d ||
      w_beta.rows() != w_gamma.rows()) {
    throw Error(Errc::ShapeMismatch, "adaLN parameter shapes disagree");
  }
}

namespace {

// Normalizes each row in double and hands the normalized value to emit(i, j, v).
template <typename T, typename Emit>
void normalize_rows(const Matrix<T>& z, double eps, Emit&& emit) {
  const double n = static_cast<double>(z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = z.row(i);
    double mean = 0.0;
    for (const T v : row) mean += static_cast<double>(v);
    mean /= n;
    double var = 0.0;
    for (const T v : row) {
      const double d = static_cast<double>(v) - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < row.size(); ++j) emit(i, j, (static_cast<double>(row[j]) - mean) * inv);
  }
}

}  // namespace

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& z, double eps) {
  Matrix<T> out(z.rows(), z.cols());
  normalize_rows(z, eps, [&](std::size_t i, std::size_t j, double v) { out(i, j) = static_cast<T>(v); });
  return out;
}

template <typename T>
ScaleShift<T> regress(const AdaLNParams<T>& p, std::span<const T> c) {
  p.validate();
  if (c.size() != p.cond_dim()) throw Error(Errc::ShapeMismatch, "conditioning length mismatch");
  const std::size_t d = p.channels();
  std::vector<double> gamma(p.b_gamma.begin(), p.b_gamma.end()), beta(p.b_beta.begin(), p.b_beta.end());
  for (std::size_t k = 0; k < c.size(); ++k) {
    const auto gr = p.w_gamma.row(k);
    const auto br = p.w_beta.row(k);
    const double ck = static_cast<double>(c[k]);
    for (std::size_t j = 0; j < d; ++j) {
      gamma[j] += ck * static_cast<double>(gr[j]);
      beta[j] += ck * static_cast<double>(br[j]);
    }
  }
  return {std::vector<T>(gamma.begin(), gamma.end()), std::vector<T>(beta.begin(), beta.end())};
}

template <typename T>
Matrix<T> adaln_forward(const Matrix<T>& z, const AdaLNParams<T>& p, std::span<const T> c) {
  if (z.cols() != p.channels()) throw Error(Errc::ShapeMismatch, "adaLN input width mismatch");
  const auto ss = regress(p, c);
  Matrix<T> out(z.rows(), z.cols());
  normalize_rows(z, kLayerNormEps, [&](std::size_t i, std::size_t j, double v) {
    out(i, j) = static_cast<T>(v * (1.0 + static_cast<double>(ss.gamma[j])) + static_cast<double>(ss.beta[j]));
  });
  return out;
}

template <typename T>
FoldedLinear<T> fold_weight(const Matrix<T>& w, std::span<const T> bias, const BalancingPair& pair) {
  if (pair.bw.size() != w.rows()) throw Error(Errc::ShapeMismatch, "fold_weight: pair length != d_in");
  if (!bias.empty() && bias.size() != w.cols()) throw Error(Errc::ShapeMismatch, "fold_weight: bias length");
  return {scale_rows(w, pair.bw), std::vector<T>(bias.begin(), bias.end()), pair};
}

template <typename T>
AdaLNParams<T> fold_adaln(const AdaLNParams<T>& p, const BalancingPair& pair) {
  p.validate();
  if (pair.bx.size() != p.channels()) throw Error(Errc::ShapeMismatch, "fold_adaln: pair length != d_in");
  AdaLNParams<T> out{scale_columns(p.w_gamma, pair.bx), scale_columns(p.w_beta, pair.bx),
                     p.b_gamma, p.b_beta};
  for (std::size_t j = 0; j < pair.size(); ++j) {
    out.b_gamma[j] = static_cast<T>(static_cast<double>(p.b_gamma[j]) * pair.bx[j]);
    out.b_beta[j] = static_cast<T>(static_cast<double>(p.b_beta[j]) * pair.bx[j]);
  }
  return out;
}

template <typename T>
Matrix<T> balanced_adaln_forward(const Matrix<T>& z, const AdaLNParams<T>& folded,
                                 const BalancingPair& pair, std::span<const T> c) {
  if (z.cols() != folded.channels() || pair.bx.size() != z.cols()) {
    throw Error(Errc::ShapeMismatch, "balanced adaLN width mismatch");
  }
  const auto ss = regress(folded, c);
  Matrix<T> out(z.rows(), z.cols());
  normalize_rows(z, kLayerNormEps, [&](std::size_t i, std::size_t j, double v) {
    out(i, j) = static_cast<T>(v * (pair.bx[j] + static_cast<double>(ss.gamma[j])) + static_cast<double>(ss.beta[j]));
  });
  return out;
}

QuantParams fold_dequant_scales(const QuantParams& p, const BalancingPair& pair) {
  p.validate();
  if (p.granularity != Granularity::PerOutputChannel) {
    throw Error(Errc::GranularityMismatch, "per-tensor dequantization cannot absorb per-channel factors");
  }
  if (p.groups() != pair.size()) throw Error(Errc::ShapeMismatch, "fold_dequant_scales: group count != pair length");
  QuantParams out = p;
  for (std::size_t j = 0; j < pair.size(); ++j) out.delta[j] = p.delta[j] * pair.bx[j];
  return out;
}

template <typename T>
double relative_deviation(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::ShapeMismatch, "relative_deviation: shapes differ");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    num += d * d;
    den += static_cast<double>(b.data()[i]) * static_cast<double>(b.data()[i]);
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

#define SQ_INSTANTIATE_REPARAM(T)                                                                 \
  template struct AdaLNParams<T>;                                                                 \
  template Matrix<T> layer_norm<T>(const Matrix<T>&, double);                                     \
  template ScaleShift<T> regress<T>(const AdaLNParams<T>&, std::span<const T>);                   \
  template Matrix<T> adaln_forward<T>(const Matrix<T>&, const AdaLNParams<T>&, std::span<const T>); \
  template FoldedLinear<T> fold_weight<T>(const Matrix<T>&, std::span<const T>, const BalancingPair&); \
  template AdaLNParams<T> fold_adaln<T>(const AdaLNParams<T>&, const BalancingPair&);             \
  template Matrix<T> balanced_adaln_forward<T>(const Matrix<T>&, const AdaLNParams<T>&,           \
                                               const BalancingPair&, std::span<const T>);         \
  template double relative_deviation<T>(const Matrix<T>&, const Matrix<T>&);

SQ_INSTANTIATE_REPARAM(float)
SQ_INSTANTIATE_REPARAM(double)

}  // namespace sq
