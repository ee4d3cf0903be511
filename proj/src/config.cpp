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

#include "sq/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace sq {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw Error(Errc::ConfigError, where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw Error(Errc::ConfigError, "unknown key '" + where + "." + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& ex) {
    throw Error(Errc::ConfigError, where + "." + key + ": " + ex.what());
  }
}

Granularity granularity_from_name(const std::string& s) {
  if (s == "per_tensor") return Granularity::PerTensor;
  if (s == "per_output_channel") return Granularity::PerOutputChannel;
  throw Error(Errc::ConfigError, "unknown granularity '" + s + "'");
}

const char* granularity_name(Granularity g) {
  return g == Granularity::PerTensor ? "per_tensor" : "per_output_channel";
}

Fitter fitter_from_name(const std::string& s) {
  if (s == "minmax") return Fitter::MinMax;
  if (s == "mse_search") return Fitter::MseSearch;
  throw Error(Errc::ConfigError, "unknown fitter '" + s + "'");
}

ProfileConfig profile_from_json(const json& j, const std::string& where) {
  reject_unknown(j, where, {"channels", "magnitude"});
  ProfileConfig p;
  read(j, "channels", p.channels, where);
  read(j, "magnitude", p.magnitude, where);
  return p;
}

json profile_to_json(const ProfileConfig& p) {
  return {{"channels", p.channels}, {"magnitude", p.magnitude}};
}

bool valid_bits(int b) { return (b >= 2 && b <= 8) || b == kFullPrecisionBits; }

}  // namespace

bool BalancingConfig::enabled(LayerRole role) const {
  switch (role) {
    case LayerRole::Projection1: return proj1;
    case LayerRole::Projection2: return proj2;
    case LayerRole::FC1: return fc1;
    case LayerRole::FC2: return false;
  }
  return false;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, m); };
  const auto& m = model;
  if (m.d_in == 0 || m.heads == 0 || m.d_in % m.heads != 0) fail("model.d_in must be divisible by model.heads");
  if (m.tokens == 0 || m.mlp_ratio == 0) fail("model.tokens and model.mlp_ratio must be positive");
  for (const auto* p : {&m.weight_profile, &m.act_profile}) {
    if (p->channels.size() != p->magnitude.size()) fail("profile channels and magnitude lengths differ");
    for (const auto c : p->channels) {
      if (c >= m.d_in) fail("profile channel out of range");
    }
    for (const double v : p->magnitude) {
      if (!(v > 0.0)) fail("profile magnitudes must be positive");
    }
  }
  if (!(m.drift.swing >= 1.0)) fail("model.drift.swing must be >= 1");
  if (!(m.cond_std >= 0.0)) fail("model.cond_std must be >= 0");
  if (calibration.timesteps < 1) fail("calibration.timesteps must be >= 1");
  if (calibration.samples_per_t < 1) fail("calibration.samples_per_t must be >= 1");
  if (calibration.schedule_steps < static_cast<int>(calibration.timesteps)) {
    fail("calibration.schedule_steps must be >= calibration.timesteps");
  }
  if (!valid_bits(quant.weight_bits) || !valid_bits(quant.act_bits)) {
    fail("bit-widths must be in [2, 8] or 32 (full precision)");
  }
  if (quant.fitter == Fitter::MseSearch && quant.shrink_grid.empty()) fail("quant.shrink_grid is empty");
  for (const double s : quant.shrink_grid) {
    if (!(s > 0.0 && s <= 1.0)) fail("quant.shrink_grid entries must lie in (0, 1]");
  }
  if (!(balancing.eps > 0.0)) fail("balancing.eps must be positive");
  if (eval.samples_per_t < 1) fail("eval.samples_per_t must be >= 1");
  if (!(eval.tolerance > 0.0)) fail("eval.tolerance must be positive");
  if (artifacts.empty()) fail("output.artifacts must not be empty");
}

PipelineConfig default_config() {
  PipelineConfig c;
  c.model.weight_profile = {{8, 29, 51}, {12.0, 12.0, 12.0}};
  c.model.act_profile = {{3, 17, 42}, {8.0, 8.0, 8.0}};
  c.model.drift = {DriftKind::VShape, 4.0};
  c.quant.shrink_grid = {1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5};
  return c;
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c = default_config();
  reject_unknown(j, "config", {"seed", "model", "calibration", "quant", "balancing", "eval", "output"});
  read(j, "seed", c.seed, "config");
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, "model", {"d_in", "tokens", "heads", "mlp_ratio", "path", "weight_profile",
                                "act_profile", "drift", "cond_std"});
    read(m, "d_in", c.model.d_in, "model");
    read(m, "tokens", c.model.tokens, "model");
    read(m, "heads", c.model.heads, "model");
    read(m, "mlp_ratio", c.model.mlp_ratio, "model");
    read(m, "path", c.model.path, "model");
    read(m, "cond_std", c.model.cond_std, "model");
    if (m.contains("weight_profile")) c.model.weight_profile = profile_from_json(m["weight_profile"], "model.weight_profile");
    if (m.contains("act_profile")) c.model.act_profile = profile_from_json(m["act_profile"], "model.act_profile");
    if (m.contains("drift")) {
      const json& d = m["drift"];
      reject_unknown(d, "model.drift", {"kind", "swing"});
      std::string kind = drift_kind_name(c.model.drift.kind);
      read(d, "kind", kind, "model.drift");
      c.model.drift.kind = drift_kind_from_name(kind);
      read(d, "swing", c.model.drift.swing, "model.drift");
    }
  }
  if (j.contains("calibration")) {
    const json& k = j["calibration"];
    reject_unknown(k, "calibration", {"timesteps", "samples_per_t", "schedule_steps"});
    read(k, "timesteps", c.calibration.timesteps, "calibration");
    read(k, "samples_per_t", c.calibration.samples_per_t, "calibration");
    read(k, "schedule_steps", c.calibration.schedule_steps, "calibration");
  }
  if (j.contains("quant")) {
    const json& q = j["quant"];
    reject_unknown(q, "quant", {"weight_bits", "act_bits", "weight_granularity", "act_granularity",
                                "fitter", "shrink_grid", "quantize_v"});
    read(q, "weight_bits", c.quant.weight_bits, "quant");
    read(q, "act_bits", c.quant.act_bits, "quant");
    std::string wg = granularity_name(c.quant.weight_granularity);
    std::string ag = granularity_name(c.quant.act_granularity);
    std::string fitter = c.quant.fitter == Fitter::MinMax ? "minmax" : "mse_search";
    read(q, "weight_granularity", wg, "quant");
    read(q, "act_granularity", ag, "quant");
    read(q, "fitter", fitter, "quant");
    c.quant.weight_granularity = granularity_from_name(wg);
    c.quant.act_granularity = granularity_from_name(ag);
    c.quant.fitter = fitter_from_name(fitter);
    read(q, "shrink_grid", c.quant.shrink_grid, "quant");
    read(q, "quantize_v", c.quant.quantize_v, "quant");
  }
  if (j.contains("balancing")) {
    const json& b = j["balancing"];
    reject_unknown(b, "balancing", {"eps", "proj1", "proj2", "fc1", "ssc", "corrupt_bw"});
    read(b, "eps", c.balancing.eps, "balancing");
    read(b, "proj1", c.balancing.proj1, "balancing");
    read(b, "proj2", c.balancing.proj2, "balancing");
    read(b, "fc1", c.balancing.fc1, "balancing");
    read(b, "ssc", c.balancing.ssc, "balancing");
    read(b, "corrupt_bw", c.balancing.corrupt_bw, "balancing");
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    reject_unknown(e, "eval", {"samples_per_t", "tolerance"});
    read(e, "samples_per_t", c.eval.samples_per_t, "eval");
    read(e, "tolerance", c.eval.tolerance, "eval");
  }
  if (j.contains("output")) {
    const json& o = j["output"];
    reject_unknown(o, "output", {"artifacts"});
    read(o, "artifacts", c.artifacts, "output");
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::ConfigError, "cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& ex) {
    throw Error(Errc::ConfigError, std::string("config is not valid JSON: ") + ex.what());
  }
  return config_from_json(j);
}

json config_to_json(const PipelineConfig& c) {
  return {
      {"seed", c.seed},
      {"model",
       {{"d_in", c.model.d_in},
        {"tokens", c.model.tokens},
        {"heads", c.model.heads},
        {"mlp_ratio", c.model.mlp_ratio},
        {"path", c.model.path},
        {"cond_std", c.model.cond_std},
        {"weight_profile", profile_to_json(c.model.weight_profile)},
        {"act_profile", profile_to_json(c.model.act_profile)},
        {"drift", {{"kind", drift_kind_name(c.model.drift.kind)}, {"swing", c.model.drift.swing}}}}},
      {"calibration",
       {{"timesteps", c.calibration.timesteps},
        {"samples_per_t", c.calibration.samples_per_t},
        {"schedule_steps", c.calibration.schedule_steps}}},
      {"quant",
       {{"weight_bits", c.quant.weight_bits},
        {"act_bits", c.quant.act_bits},
        {"weight_granularity", granularity_name(c.quant.weight_granularity)},
        {"act_granularity", granularity_name(c.quant.act_granularity)},
        {"fitter", c.quant.fitter == Fitter::MinMax ? "minmax" : "mse_search"},
        {"shrink_grid", c.quant.shrink_grid},
        {"quantize_v", c.quant.quantize_v}}},
      {"balancing",
       {{"eps", c.balancing.eps},
        {"proj1", c.balancing.proj1},
        {"proj2", c.balancing.proj2},
        {"fc1", c.balancing.fc1},
        {"ssc", c.balancing.ssc},
        {"corrupt_bw", c.balancing.corrupt_bw}}},
      {"eval", {{"samples_per_t", c.eval.samples_per_t}, {"tolerance", c.eval.tolerance}}},
      {"output", {{"artifacts", c.artifacts}}},
  };
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : bytes) {
    h ^= static_cast<std::uint8_t>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const PipelineConfig& cfg) {
  // The artifact location does not change any result, so it is not hashed.
  json canonical = config_to_json(cfg);
  canonical.erase("output");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical.dump())));
  return buf;
}

}  // namespace sq
