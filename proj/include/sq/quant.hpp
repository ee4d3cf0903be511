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

namespace sq {

/// Weights quantize per output channel (one group per column of the
/// d_in x d_out weight); activations per tensor. Salience balancing acts on
/// input channels, i.e. the other axis.
enum class Granularity { PerTensor, PerOutputChannel };

/// Smallest step size emitted by the fitters (constant groups).
inline constexpr double kMinDelta = 1e-8;

struct QuantParams {
  int bits = 8;
  std::vector<double> delta;
  std::vector<std::int32_t> zero_point;
  Granularity granularity = Granularity::PerTensor;

  std::int32_t qmax() const noexcept { return (std::int32_t{1} << bits) - 1; }
  std::size_t groups() const noexcept { return delta.size(); }

  /// Throws InvalidParams unless bits >= 2, every delta > 0 and finite, and
  /// every zero point lies in [0, qmax].
  void validate() const;
  /// Throws unless the group count fits a tensor with `cols` columns.
  void validate_for(std::size_t cols) const;

  bool operator==(const QuantParams&) const = default;
};

QuantParams per_tensor_params(int bits, double delta, std::int32_t zero_point);

struct QuantizedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> codes;
  QuantParams params;
};

template <typename T>
QuantizedTensor quantize(const Matrix<T>& x, const QuantParams& p);

template <typename T = float>
Matrix<T> dequantize(const QuantizedTensor& q);

/// Dequantizes codes against a different parameter set (same bits and group
/// layout). Used when balancing factors are folded into dequant scales.
template <typename T = float>
Matrix<T> dequantize_with(const QuantizedTensor& q, const QuantParams& p);

template <typename T>
Matrix<T> fake_quantize(const Matrix<T>& x, const QuantParams& p);

template <typename T>
QuantParams fit_minmax(const Matrix<T>& x, int bits, Granularity g);

/// Min-max fit on [shrink * min, shrink * max] for each shrink factor; each
/// group keeps the candidate with the lowest fake-quantization MSE, ties going
/// to the larger shrink factor.
template <typename T>
QuantParams fit_mse_search(const Matrix<T>& x, int bits, Granularity g,
                           std::span<const double> shrink_grid);

template <typename T>
double quant_error_mse(const Matrix<T>& x, const QuantParams& p);

/// Params for a single range [lo, hi]; exposed for the search and for tests.
void fit_range(double lo, double hi, int bits, double& delta, std::int32_t& zero_point);

/// Replicates a per-tensor quantizer into `channels` identical per-channel groups.
QuantParams expand_per_channel(const QuantParams& p, std::size_t channels);

}  // namespace sq
