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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sq/dit_sim.hpp"
#include "sq/quant.hpp"

namespace sq {

/// Bit-width sentinel meaning "leave this tensor in full precision".
inline constexpr int kFullPrecisionBits = 32;

struct ProfileConfig {
  std::vector<std::size_t> channels;
  std::vector<double> magnitude;
};

struct DriftConfig {
  DriftKind kind = DriftKind::Flat;
  double swing = 1.0;
};

struct ModelConfig {
  std::size_t d_in = 64;
  std::size_t tokens = 16;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  /// Saved model container; empty means "initialize from the root seed".
  std::string path;
  ProfileConfig weight_profile;
  ProfileConfig act_profile;
  DriftConfig drift;
  double cond_std = 0.5;
};

struct CalibrationConfig {
  std::size_t timesteps = 10;
  std::size_t samples_per_t = 8;
  int schedule_steps = 100;
};

enum class Fitter { MinMax, MseSearch };

struct QuantConfig {
  int weight_bits = 4;
  int act_bits = 8;
  Granularity weight_granularity = Granularity::PerOutputChannel;
  Granularity act_granularity = Granularity::PerTensor;
  Fitter fitter = Fitter::MseSearch;
  std::vector<double> shrink_grid;
  /// Quantize the attention V operand (the matmul whose dequantization absorbs
  /// the Projection2 balancing). Uses act_bits.
  bool quantize_v = true;
};

struct BalancingConfig {
  double eps = 1e-5;
  bool proj1 = true;
  bool proj2 = true;
  bool fc1 = true;
  bool ssc = true;
  /// Negative control: break the bx/bw pairing before folding.
  bool corrupt_bw = false;

  bool enabled(LayerRole role) const;
};

struct EvalConfig {
  std::size_t samples_per_t = 4;
  double tolerance = 1e-5;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  CalibrationConfig calibration;
  QuantConfig quant;
  BalancingConfig balancing;
  EvalConfig eval;
  std::string artifacts = "artifacts";

  /// Throws ConfigError on any out-of-range value.
  void validate() const;
};

PipelineConfig default_config();

/// Missing keys keep their defaults; unknown keys are a ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const PipelineConfig& cfg);

/// FNV-1a 64 of the canonical (sorted-key, compact) JSON without the
/// "output" section, as 16 hex digits.
std::string config_hash(const PipelineConfig& cfg);
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace sq
