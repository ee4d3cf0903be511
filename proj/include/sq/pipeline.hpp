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
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sq/config.hpp"
#include "sq/container.hpp"
#include "sq/dit_sim.hpp"
#include "sq/reparam.hpp"
#include "sq/temporal.hpp"

namespace sq {

inline constexpr const char* kVersion = "0.1.0";

// Artifact file names inside the artifact directory.
inline constexpr const char* kModelFile = "model.sqt";
inline constexpr const char* kCalibrationFile = "calibration.sqt";
inline constexpr const char* kActivationsFile = "acts.sqt";
inline constexpr const char* kCheckpointFile = "checkpoint.sqt";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kPerLayerCsv = "per_layer.csv";
inline constexpr const char* kLockFile = ".sq.lock";

std::vector<int> calibration_timesteps(const PipelineConfig& cfg);
SalienceProfile weight_profile(const PipelineConfig& cfg);
SalienceProfile act_profile(const PipelineConfig& cfg, std::span<const int> timesteps);

/// Initializes from the model seed stream, or loads cfg.model.path when set.
DiTBlockParams build_model(const PipelineConfig& cfg);

void put_model(TensorContainer& c, const DiTBlockParams& p, const std::string& prefix = "");
DiTBlockParams get_model(const TensorContainer& c, const std::string& prefix = "");

/// Calibration statistics for every linear layer (FC2 included for
/// diagnostics; its pair is never applied).
struct Calibration {
  std::vector<int> timesteps;
  std::map<LayerRole, LayerCalibration> layers;
};

/// Generates calibration activations from the calibration seed stream and
/// runs salience calibration per layer.
Calibration calibrate(const PipelineConfig& cfg, const DiTBlockParams& model, CalibrationSet& data);
Calibration calibrate(const PipelineConfig& cfg, const DiTBlockParams& model);

TensorContainer calibration_to_container(const Calibration& cal);
Calibration calibration_from_container(const TensorContainer& c);
TensorContainer activations_to_container(const CalibrationSet& data);
CalibrationSet activations_from_container(const TensorContainer& c);

struct QuantizedModel {
  /// Folded, full-precision parameters.
  DiTBlockParams folded;
  /// Folded parameters with fake-quantized weights plus activation quantizers.
  BlockRuntime runtime;
  /// Pair folded into each layer (identity where balancing is off).
  std::array<BalancingPair, 4> pairs;
  std::array<std::optional<QuantParams>, 4> weight_params;
  std::array<std::optional<QuantizedTensor>, 4> weight_codes;
  /// Projection2 balancing applied as an explicit scale on the attention
  /// output because V is not quantized (equivalence-testing mode).
  bool proj2_explicit_scale = false;
};

/// Folds the pairs, then fits weight quantizers on the folded weights and
/// activation quantizers on pooled balanced calibration activations.
QuantizedModel quantize_model(const PipelineConfig& cfg, const DiTBlockParams& model,
                              const Calibration& cal, const CalibrationSet& data);

/// Folded model in full precision: the runtime the equivalence check runs.
BlockRuntime folded_runtime(const QuantizedModel& q);

TensorContainer checkpoint_to_container(const QuantizedModel& q);
QuantizedModel checkpoint_from_container(const TensorContainer& c);

struct LayerMetrics {
  LayerRole role = LayerRole::Projection1;
  bool balanced = false;
  double w_mse = 0.0;
  double a_mse = 0.0;
  double out_mse = 0.0;
  double so_pre = 0.0;
  double so_post = 0.0;
  std::vector<double> rho;
  std::vector<double> eta;
  std::vector<double> aggregation;
};

struct DeviationStats {
  double min = 0.0, median = 0.0, p90 = 0.0, max = 0.0, mean = 0.0;
};

/// Layer-wise metrics are this toolkit's own quality surface:
///   w_mse   mean squared weight error in original coordinates, diag(bx) * (W~ - Q(W~))
///   a_mse   mean squared activation error in original coordinates, (X~ - Q(X~)) * diag(1/bx)
///   out_mse mean squared error of Q(X~) Q(W~) against X W on full-precision layer inputs
struct EvalReport {
  std::vector<LayerMetrics> layers;
  double block_mse = 0.0;
  DeviationStats block_rel_dev;
  EquivalenceReport equivalence;
  bool proj2_explicit_scale = false;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version = kVersion;

  nlohmann::json to_json() const;
  std::string per_layer_csv() const;
};

EvalReport evaluate(const PipelineConfig& cfg, const DiTBlockParams& model, const Calibration& cal,
                    const QuantizedModel& q);

/// calibrate -> quantize -> evaluate without touching the filesystem.
EvalReport run_in_memory(const PipelineConfig& cfg);

// CLI commands; each reads and writes cfg.artifacts under a lock file.
void run_calibrate(const PipelineConfig& cfg);
void run_quantize(const PipelineConfig& cfg);
EvalReport run_evaluate(const PipelineConfig& cfg);
void run_challenge(const PipelineConfig& cfg);

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyResult {
  std::vector<VerifyCheck> checks;
  bool passed() const;
};

VerifyResult run_verify(const PipelineConfig& cfg);

/// Exclusive lock on an artifact directory; a second holder gets IOFailure.
class ArtifactLock {
 public:
  explicit ArtifactLock(const std::filesystem::path& dir);
  ~ArtifactLock();
  ArtifactLock(const ArtifactLock&) = delete;
  ArtifactLock& operator=(const ArtifactLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace sq
