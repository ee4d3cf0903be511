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

#include "sq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sq/kernels.hpp"

namespace sq {
namespace {

template <typename T>
void require_finite(const Matrix<T>& x) {
  for (const T v : x.data()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw Error(Errc::NonFiniteInput, "tensor contains NaN or Inf");
    }
  }
}

void require_bits(int bits) {
  if (bits < 2 || bits > 30) throw Error(Errc::InvalidParams, "bit-width must be in [2, 30]");
}

std::size_t group_count(std::size_t cols, Granularity g) {
  return g == Granularity::PerTensor ? 1 : cols;
}

// Per-group [min, max] in double.
template <typename T>
void group_ranges(const Matrix<T>& x, Granularity g, std::vector<double>& lo,
                  std::vector<double>& hi) {
  const std::size_t groups = group_count(x.cols(), g);
  lo.assign(groups, std::numeric_limits<double>::infinity());
  hi.assign(groups, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const std::size_t k = g == Granularity::PerTensor ? 0 : c;
      const double v = static_cast<double>(x(r, c));
      lo[k] = std::min(lo[k], v);
      hi[k] = std::max(hi[k], v);
    }
  }
}

double dequant_value(std::int32_t code, double delta, std::int32_t zp) {
  return delta * static_cast<double>(code - zp);
}

}  // namespace

void QuantParams::validate() const {
  require_bits(bits);
  if (delta.empty() || delta.size() != zero_point.size()) {
    throw Error(Errc::InvalidParams, "delta and zero_point must be nonempty and equal length");
  }
  for (std::size_t g = 0; g < delta.size(); ++g) {
    if (!(delta[g] > 0.0) || !std::isfinite(delta[g])) {
      throw Error(Errc::InvalidParams, "step size must be positive and finite");
    }
    if (zero_point[g] < 0 || zero_point[g] > qmax()) {
      throw Error(Errc::InvalidParams, "zero point outside code range");
    }
  }
  if (granularity == Granularity::PerTensor && delta.size() != 1) {
    throw Error(Errc::InvalidParams, "per-tensor params must have one group");
  }
}

void QuantParams::validate_for(std::size_t cols) const {
  validate();
  if (groups() != group_count(cols, granularity)) {
    throw Error(Errc::ShapeMismatch, "group count does not match tensor columns");
  }
}

QuantParams per_tensor_params(int bits, double delta, std::int32_t zero_point) {
  QuantParams p{bits, {delta}, {zero_point}, Granularity::PerTensor};
  p.validate();
  return p;
}

void fit_range(double lo, double hi, int bits, double& delta, std::int32_t& zero_point) {
  require_bits(bits);
  const double qmax = static_cast<double>((std::int64_t{1} << bits) - 1);
  delta = std::max((hi - lo) / qmax, kMinDelta);
  zero_point = static_cast<std::int32_t>(std::clamp(std::nearbyint(-lo / delta), 0.0, qmax));
}

QuantParams expand_per_channel(const QuantParams& p, std::size_t channels) {
  p.validate();
  if (p.granularity != Granularity::PerTensor) {
    throw Error(Errc::GranularityMismatch, "expand_per_channel expects per-tensor params");
  }
  return QuantParams{p.bits, std::vector<double>(channels, p.delta[0]),
                     std::vector<std::int32_t>(channels, p.zero_point[0]),
                     Granularity::PerOutputChannel};
}

template <typename T>
QuantizedTensor quantize(const Matrix<T>& x, const QuantParams& p) {
  p.validate_for(x.cols());
  require_finite(x);
  QuantizedTensor q{x.rows(), x.cols(), std::vector<std::int32_t>(x.size()), p};
  kernels::quantize_codes<T>(x.data(), x.cols(), p.granularity == Granularity::PerOutputChannel,
                             p.delta, p.zero_point, p.qmax(), q.codes);
  return q;
}

template <typename T>
Matrix<T> dequantize_with(const QuantizedTensor& q, const QuantParams& p) {
  p.validate_for(q.cols);
  if (p.bits != q.params.bits) throw Error(Errc::InvalidParams, "bit-width mismatch");
  const bool per_col = p.granularity == Granularity::PerOutputChannel;
  Matrix<T> out(q.rows, q.cols);
  auto dst = out.data();
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    const std::size_t g = per_col ? i % q.cols : 0;
    dst[i] = static_cast<T>(dequant_value(q.codes[i], p.delta[g], p.zero_point[g]));
  }
  return out;
}

template <typename T>
Matrix<T> dequantize(const QuantizedTensor& q) {
  return dequantize_with<T>(q, q.params);
}

template <typename T>
Matrix<T> fake_quantize(const Matrix<T>& x, const QuantParams& p) {
  return dequantize<T>(quantize(x, p));
}

template <typename T>
QuantParams fit_minmax(const Matrix<T>& x, int bits, Granularity g) {
  require_bits(bits);
  if (x.empty()) throw Error(Errc::InvalidParams, "cannot fit params on an empty tensor");
  require_finite(x);
  std::vector<double> lo, hi;
  group_ranges(x, g, lo, hi);
  QuantParams p{bits, std::vector<double>(lo.size()), std::vector<std::int32_t>(lo.size()), g};
  for (std::size_t k = 0; k < lo.size(); ++k) fit_range(lo[k], hi[k], bits, p.delta[k], p.zero_point[k]);
  return p;
}

template <typename T>
QuantParams fit_mse_search(const Matrix<T>& x, int bits, Granularity g,
                           std::span<const double> shrink_grid) {
  if (shrink_grid.empty()) throw Error(Errc::InvalidParams, "shrink grid is empty");
  for (const double s : shrink_grid) {
    if (!(s > 0.0 && s <= 1.0)) throw Error(Errc::InvalidParams, "shrink factors must lie in (0, 1]");
  }
  QuantParams best = fit_minmax(x, bits, g);
  std::vector<double> lo, hi;
  group_ranges(x, g, lo, hi);

  std::vector<double> grid(shrink_grid.begin(), shrink_grid.end());
  std::sort(grid.begin(), grid.end(), std::greater<>());

  const std::size_t groups = lo.size();
  const bool per_col = g == Granularity::PerOutputChannel;
  const double qmax = static_cast<double>(best.qmax());

  // Groups are independent; each squared-error sum runs in a fixed order.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(groups); ++gi) {
    const std::size_t k = static_cast<std::size_t>(gi);
    double best_err = std::numeric_limits<double>::infinity();
    for (const double s : grid) {
      double delta;
      std::int32_t zp;
      fit_range(s * lo[k], s * hi[k], bits, delta, zp);
      double err = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = per_col ? k : 0; c < x.cols(); c += per_col ? x.cols() : 1) {
          const double v = static_cast<double>(x(r, c));
          const double q = std::clamp(std::nearbyint(v / delta) + zp, 0.0, qmax);
          const double d = v - static_cast<double>(static_cast<T>(delta * (q - zp)));
          err += d * d;
        }
      }
      if (err < best_err) {
        best_err = err;
        best.delta[k] = delta;
        best.zero_point[k] = zp;
      }
    }
  }
  return best;
}

template <typename T>
double quant_error_mse(const Matrix<T>& x, const QuantParams& p) {
  if (x.empty()) return 0.0;
  const Matrix<T> fq = fake_quantize(x, p);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.data()[i]) - static_cast<double>(fq.data()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

#define SQ_INSTANTIATE_QUANT(T)                                                               \
  template QuantizedTensor quantize<T>(const Matrix<T>&, const QuantParams&);                 \
  template Matrix<T> dequantize<T>(const QuantizedTensor&);                                   \
  template Matrix<T> dequantize_with<T>(const QuantizedTensor&, const QuantParams&);          \
  template Matrix<T> fake_quantize<T>(const Matrix<T>&, const QuantParams&);                  \
  template QuantParams fit_minmax<T>(const Matrix<T>&, int, Granularity);                     \
  template QuantParams fit_mse_search<T>(const Matrix<T>&, int, Granularity,                  \
                                         std::span<const double>);                           \
  template double quant_error_mse<T>(const Matrix<T>&, const QuantParams&);

SQ_INSTANTIATE_QUANT(float)
SQ_INSTANTIATE_QUANT(double)

}  // namespace sq
