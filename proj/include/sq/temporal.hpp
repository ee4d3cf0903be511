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
#include <vector>

#include "sq/matrix.hpp"
#include "sq/salience.hpp"

namespace sq {

/// Calibration activations of one layer, grouped by sampler timestep.
struct TimestepActivations {
  std::vector<std::vector<MatrixF>> per_t;
  std::vector<int> timesteps;

  std::size_t steps() const noexcept { return per_t.size(); }
  std::size_t channels() const;
  /// Throws unless T >= 1, every batch is nonempty, channel counts agree and
  /// timesteps are strictly increasing.
  void validate() const;
};

struct SpearmanWeights {
  std::vector<double> eta;
  std::vector<double> rho;
};

/// Spearman rank correlation with average ranks for ties; 0 when either
/// argument is constant.
double spearman_rho(std::span<const double> a, std::span<const double> b);

/// Average (fractional) 1-based ranks.
std::vector<double> average_ranks(std::span<const double> v);

/// eta[t] = softmax(-rho)[t] with rho[t] = spearman_rho(saliences[t], sw).
SpearmanWeights eta_weights(std::span<const SalienceVector> saliences, const SalienceVector& sw);

/// Per-channel convex combination sum_t weights[t] * saliences[t][j].
SalienceVector temporal_salience(std::span<const SalienceVector> saliences,
                                 std::span<const double> weights);

struct LayerCalibration {
  std::vector<SalienceVector> per_t;
  SalienceVector weight;
  SpearmanWeights spearman;
  /// Weights actually used to aggregate per_t: eta with temporal calibration
  /// on, a one-hot at the midpoint timestep otherwise.
  std::vector<double> aggregation;
  SalienceVector temporal;
  BalancingPair pair;
  double so_pre = 0.0;
  double so_post = 0.0;
};

struct CalibrateOptions {
  double eps = kSalienceEps;
  bool ssc = true;
};

/// Index of the timestep used when temporal calibration is disabled.
inline std::size_t midpoint_index(std::size_t steps) noexcept { return steps / 2; }

LayerCalibration calibrate_layer(const TimestepActivations& acts, const MatrixF& w,
                                 const CalibrateOptions& opts = {});

}  // namespace sq
