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

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sq/matrix.hpp"
#include "sq/quant.hpp"
#include "sq/reparam.hpp"
#include "sq/temporal.hpp"

namespace sq {

/// Linear layers of a DiT block. Projection1 is the fused QKV projection.
enum class LayerRole { Projection1 = 0, Projection2 = 1, FC1 = 2, FC2 = 3 };

inline constexpr std::array<LayerRole, 4> kAllRoles = {LayerRole::Projection1, LayerRole::Projection2,
                                                       LayerRole::FC1, LayerRole::FC2};
inline constexpr std::array<LayerRole, 3> kBalancedRoles = {LayerRole::Projection1,
                                                            LayerRole::Projection2, LayerRole::FC1};

const char* layer_name(LayerRole role) noexcept;
const char* role_name(LayerRole role) noexcept;
LayerRole layer_from_name(const std::string& name);

/// Channels with injected magnitude. `drift` is a per-timestep multiplier
/// (empty means 1 at every timestep).
struct SalienceProfile {
  std::vector<std::size_t> channels;
  std::vector<double> magnitude;
  std::vector<double> drift;

  double drift_at(std::size_t t) const { return drift.empty() ? 1.0 : drift.at(t); }
  /// Throws InvalidProfile on out-of-range channels, length mismatches or
  /// non-positive multipliers. `steps` = 0 skips the drift length check.
  void validate(std::size_t channels_total, std::size_t steps = 0) const;
};

struct DiTBlockParams {
  std::size_t d_in = 0;
  std::size_t heads = 1;
  std::size_t mlp_ratio = 4;
  AdaLNParams<float> adaln1;
  AdaLNParams<float> adaln2;
  MatrixF w_qkv, w_proj, w_fc1, w_fc2;
  std::vector<float> b_qkv, b_proj, b_fc1, b_fc2;

  const MatrixF& weight(LayerRole role) const;
  MatrixF& weight(LayerRole role);
  const std::vector<float>& bias(LayerRole role) const;
  void validate() const;

  bool operator==(const DiTBlockParams&) const = default;
};

/// Scale of the channel-aligned term in the adaLN regression weights.
inline constexpr double kCondCoupling = 1.0;

/// Base weights ~ N(0, 1/fan_in); rows listed in the profile are scaled by
/// their magnitude in Projection1, Projection2 and FC1. The adaLN MLPs map
/// conditioning channel k mostly onto output channel k.
DiTBlockParams init_block(std::size_t d_in, std::size_t heads, std::size_t mlp_ratio,
                          std::uint64_t seed, const SalienceProfile& weight_profile);

/// Inputs of the four linear layers plus the V operand of attention.
struct BlockTaps {
  MatrixF qkv_in, v, proj_in, fc1_in, fc2_in;
  const MatrixF& input(LayerRole role) const;
};

struct BlockOutput {
  MatrixF out;
  BlockTaps taps;
};

/// Balancing and fake quantization applied around an otherwise plain block.
/// Default-constructed it runs the full-precision block.
struct BlockRuntime {
  DiTBlockParams params;
  /// Replaces the 1 in LN(Z) * (1 + gamma) for each adaLN (empty: ones).
  std::vector<double> adaln1_base, adaln2_base;
  /// Explicit per-channel scale on the attention output (unquantized V only).
  std::vector<double> proj_in_scale;
  /// Fake quantizers on each linear layer's input, indexed by LayerRole.
  std::array<std::optional<QuantParams>, 4> act_quant;
  /// V operand: codes from v_quant, values from v_dequant.
  std::optional<QuantParams> v_quant;
  std::optional<QuantParams> v_dequant;
};

struct BlockInput {
  std::size_t t_index = 0;
  MatrixF z;
  std::vector<float> c;
};

MatrixF forward_runtime(const BlockRuntime& rt, const MatrixF& z, std::span<const float> c,
                        BlockTaps* taps = nullptr);

BlockOutput forward_block(const DiTBlockParams& p, const MatrixF& z, std::span<const float> c);

float gelu(float x) noexcept;

/// Uniformly strided timestep indices into a sampler schedule of `schedule_steps`.
std::vector<int> select_timesteps(int schedule_steps, std::size_t count);

enum class DriftKind { Flat, Linear, VShape, Peak };
DriftKind drift_kind_from_name(const std::string& name);
const char* drift_kind_name(DriftKind kind) noexcept;

/// Multiplier at each selected timestep; position u = t / (schedule_steps - 1).
/// Linear: 1 -> swing; VShape: swing at both ends, 1 in the middle; Peak: the opposite.
std::vector<double> drift_schedule(DriftKind kind, double swing, std::span<const int> timesteps,
                                   int schedule_steps);

/// Draws `samples_per_t` inputs per timestep. Z ~ N(0, 1) (tokens x d_in);
/// c ~ N(0, cond_std^2) with profile channels offset by magnitude * drift[t].
/// Each sample has its own seed derived from (seed, t, i).
std::vector<BlockInput> gen_inputs(std::size_t d_in, std::size_t tokens, std::size_t steps,
                                   std::size_t samples_per_t, const SalienceProfile& act_profile,
                                   std::uint64_t seed, double cond_std = 0.5);

struct CalibrationSet {
  std::vector<int> timesteps;
  /// Keyed by layer name plus "v".
  std::map<std::string, TimestepActivations> layers;
};

CalibrationSet gen_calibration(const DiTBlockParams& p, std::span<const int> timesteps,
                               std::size_t samples_per_t, std::size_t tokens,
                               const SalienceProfile& act_profile, std::uint64_t seed,
                               double cond_std = 0.5);

struct ChallengeReport {
  std::vector<double> act_salience;
  std::vector<double> act_mse;
  std::vector<double> weight_salience;
  std::vector<double> weight_mse;
  double act_rank_corr = 0.0;
  double weight_rank_corr = 0.0;
  /// Per timestep: min, q25, median, q75, max of the channel saliences.
  std::vector<std::array<double, 5>> timestep_quantiles;
  /// Per channel: max over t / min over t of the salience.
  std::vector<double> temporal_ratio;
  /// Per channel coefficient of variation of the salience over t.
  std::vector<double> temporal_cv;
};

/// Activations quantize per tensor, weights per output channel, both with a
/// min-max fit at `bits`; errors are then averaged per input channel.
ChallengeReport challenge_report(const TimestepActivations& acts, const MatrixF& w, int bits);

}  // namespace sq
