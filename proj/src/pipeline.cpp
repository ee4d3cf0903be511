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

#include "sq/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "sq/kernels.hpp"
#include "sq/seed.hpp"

namespace sq {
namespace fs = std::filesystem;
namespace {

constexpr std::size_t idx(LayerRole r) { return static_cast<std::size_t>(r); }

/// Negative-control corruption factor applied to bw.
constexpr double kCorruptFactor = 2.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IOFailure, "cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw Error(Errc::IOFailure, "short write to '" + path.string() + "'");
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::MissingArtifact, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

TensorContainer load_artifact(const PipelineConfig& cfg, const char* name) {
  const fs::path path = fs::path(cfg.artifacts) / name;
  if (!fs::exists(path)) {
    throw Error(Errc::MissingArtifact, "'" + path.string() + "' is missing; run the earlier pipeline stage first");
  }
  return TensorContainer::load(path);
}

void put_params(TensorContainer& c, const std::string& prefix, const QuantParams& p) {
  c.put_f64(prefix + "/delta", p.delta);
  c.put_i32(prefix + "/zero_point", p.zero_point);
  const std::int32_t meta[2] = {p.bits, p.granularity == Granularity::PerTensor ? 0 : 1};
  c.put_i32(prefix + "/meta", meta);
}

std::optional<QuantParams> get_params(const TensorContainer& c, const std::string& prefix) {
  if (!c.contains(prefix + "/meta")) return std::nullopt;
  const auto meta = c.get_i32(prefix + "/meta");
  if (meta.size() != 2) throw Error(Errc::IOFailure, prefix + "/meta is malformed");
  QuantParams p{meta[0], c.get_f64(prefix + "/delta"), c.get_i32(prefix + "/zero_point"),
                meta[1] == 0 ? Granularity::PerTensor : Granularity::PerOutputChannel};
  p.validate();
  return p;
}

void put_adaln(TensorContainer& c, const std::string& prefix, const AdaLNParams<float>& p) {
  c.put_f32(prefix + "/w_gamma", p.w_gamma);
  c.put_f32(prefix + "/w_beta", p.w_beta);
  c.put_f32(prefix + "/b_gamma", p.b_gamma);
  c.put_f32(prefix + "/b_beta", p.b_beta);
}

AdaLNParams<float> get_adaln(const TensorContainer& c, const std::string& prefix) {
  return {c.get_f32_matrix(prefix + "/w_gamma"), c.get_f32_matrix(prefix + "/w_beta"),
          c.get_f32(prefix + "/b_gamma"), c.get_f32(prefix + "/b_beta")};
}

MatrixF stack_rows(const std::vector<MatrixF>& parts, std::span<const double> col_scale = {}) {
  std::size_t rows = 0;
  for (const auto& m : parts) rows += m.rows();
  const std::size_t d = parts.front().cols();
  MatrixF out(rows, d);
  std::size_t at = 0;
  for (const auto& m : parts) {
    std::copy(m.data().begin(), m.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at * d));
    at += m.rows();
  }
  return col_scale.empty() ? out : scale_columns(out, col_scale);
}

MatrixF pooled(const TimestepActivations& acts, std::span<const double> col_scale = {}) {
  std::vector<MatrixF> all;
  for (const auto& batch : acts.per_t) all.insert(all.end(), batch.begin(), batch.end());
  return stack_rows(all, col_scale);
}

QuantParams fit(const PipelineConfig& cfg, const MatrixF& x, int bits, Granularity g) {
  if (cfg.quant.fitter == Fitter::MinMax) return fit_minmax(x, bits, g);
  return fit_mse_search(x, bits, g, cfg.quant.shrink_grid);
}

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

DeviationStats stats_of(std::vector<double> v) {
  DeviationStats s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  s.median = quantile_sorted(v, 0.5);
  s.p90 = quantile_sorted(v, 0.9);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return s;
}

std::vector<BlockInput> eval_inputs(const PipelineConfig& cfg) {
  const auto ts = calibration_timesteps(cfg);
  return gen_inputs(cfg.model.d_in, cfg.model.tokens, ts.size(), cfg.eval.samples_per_t,
                    act_profile(cfg, ts), purpose_seed(cfg.seed, SeedPurpose::Evaluation),
                    cfg.model.cond_std);
}

EquivalenceReport check_equivalence(const DiTBlockParams& model, const QuantizedModel& q,
                                    std::span<const BlockInput> inputs, double tol) {
  BlockRuntime plain;
  plain.params = model;
  const BlockRuntime folded = folded_runtime(q);
  const std::function<MatrixF(const BlockInput&)> original = [&](const BlockInput& in) {
    return forward_runtime(plain, in.z, in.c);
  };
  const std::function<MatrixF(const BlockInput&)> balanced = [&](const BlockInput& in) {
    return forward_runtime(folded, in.z, in.c);
  };
  return verify_equivalence<BlockInput>(original, balanced, inputs, tol);
}

}  // namespace

// ---------------------------------------------------------------------------
// Model and profiles

std::vector<int> calibration_timesteps(const PipelineConfig& cfg) {
  return select_timesteps(cfg.calibration.schedule_steps, cfg.calibration.timesteps);
}

SalienceProfile weight_profile(const PipelineConfig& cfg) {
  return {cfg.model.weight_profile.channels, cfg.model.weight_profile.magnitude, {}};
}

SalienceProfile act_profile(const PipelineConfig& cfg, std::span<const int> timesteps) {
  return {cfg.model.act_profile.channels, cfg.model.act_profile.magnitude,
          drift_schedule(cfg.model.drift.kind, cfg.model.drift.swing, timesteps,
                         cfg.calibration.schedule_steps)};
}

DiTBlockParams build_model(const PipelineConfig& cfg) {
  cfg.validate();
  if (!cfg.model.path.empty()) {
    DiTBlockParams p = get_model(TensorContainer::load(cfg.model.path));
    if (p.d_in != cfg.model.d_in) throw Error(Errc::ConfigError, "saved model width differs from model.d_in");
    return p;
  }
  return init_block(cfg.model.d_in, cfg.model.heads, cfg.model.mlp_ratio,
                    purpose_seed(cfg.seed, SeedPurpose::ModelInit), weight_profile(cfg));
}

void put_model(TensorContainer& c, const DiTBlockParams& p, const std::string& prefix) {
  const std::int32_t dims[3] = {static_cast<std::int32_t>(p.d_in), static_cast<std::int32_t>(p.heads),
                                static_cast<std::int32_t>(p.mlp_ratio)};
  c.put_i32(prefix + "meta/dims", dims);
  put_adaln(c, prefix + "adaln1", p.adaln1);
  put_adaln(c, prefix + "adaln2", p.adaln2);
  for (const LayerRole r : kAllRoles) {
    c.put_f32(prefix + layer_name(r) + "/w", p.weight(r));
    c.put_f32(prefix + layer_name(r) + "/b", p.bias(r));
  }
}

DiTBlockParams get_model(const TensorContainer& c, const std::string& prefix) {
  const auto dims = c.get_i32(prefix + "meta/dims");
  if (dims.size() != 3) throw Error(Errc::IOFailure, "model meta/dims is malformed");
  DiTBlockParams p;
  p.d_in = static_cast<std::size_t>(dims[0]);
  p.heads = static_cast<std::size_t>(dims[1]);
  p.mlp_ratio = static_cast<std::size_t>(dims[2]);
  p.adaln1 = get_adaln(c, prefix + "adaln1");
  p.adaln2 = get_adaln(c, prefix + "adaln2");
  p.w_qkv = c.get_f32_matrix(prefix + "proj1/w");
  p.b_qkv = c.get_f32(prefix + "proj1/b");
  p.w_proj = c.get_f32_matrix(prefix + "proj2/w");
  p.b_proj = c.get_f32(prefix + "proj2/b");
  p.w_fc1 = c.get_f32_matrix(prefix + "fc1/w");
  p.b_fc1 = c.get_f32(prefix + "fc1/b");
  p.w_fc2 = c.get_f32_matrix(prefix + "fc2/w");
  p.b_fc2 = c.get_f32(prefix + "fc2/b");
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Calibration

Calibration calibrate(const PipelineConfig& cfg, const DiTBlockParams& model, CalibrationSet& data) {
  cfg.validate();
  const auto ts = calibration_timesteps(cfg);
  data = gen_calibration(model, ts, cfg.calibration.samples_per_t, cfg.model.tokens, act_profile(cfg, ts),
                         purpose_seed(cfg.seed, SeedPurpose::Calibration), cfg.model.cond_std);
  Calibration cal;
  cal.timesteps = ts;
  const CalibrateOptions opts{cfg.balancing.eps, cfg.balancing.ssc};
  for (const LayerRole r : kAllRoles) {
    cal.layers[r] = calibrate_layer(data.layers.at(layer_name(r)), model.weight(r), opts);
  }
  return cal;
}

Calibration calibrate(const PipelineConfig& cfg, const DiTBlockParams& model) {
  CalibrationSet data;
  return calibrate(cfg, model, data);
}

TensorContainer calibration_to_container(const Calibration& cal) {
  TensorContainer c;
  c.put_i32("timesteps", cal.timesteps);
  for (const auto& [role, lc] : cal.layers) {
    const std::string p = std::string("cal/") + layer_name(role) + "/";
    for (std::size_t t = 0; t < lc.per_t.size(); ++t) {
      c.put_f64(p + "sal/" + std::to_string(cal.timesteps.at(t)), lc.per_t[t].values());
    }
    c.put_f64(p + "weight", lc.weight.values());
    c.put_f64(p + "rho", lc.spearman.rho);
    c.put_f64(p + "eta", lc.spearman.eta);
    c.put_f64(p + "aggregation", lc.aggregation);
    c.put_f64(p + "temporal", lc.temporal.values());
    c.put_f64(p + "bx", lc.pair.bx);
    c.put_f64(p + "bw", lc.pair.bw);
    const double so[2] = {lc.so_pre, lc.so_post};
    c.put_f64(p + "so", so);
  }
  return c;
}

Calibration calibration_from_container(const TensorContainer& c) {
  Calibration cal;
  cal.timesteps = c.get_i32("timesteps");
  for (const LayerRole role : kAllRoles) {
    const std::string p = std::string("cal/") + layer_name(role) + "/";
    if (!c.contains(p + "bx")) continue;
    LayerCalibration lc;
    for (const int t : cal.timesteps) lc.per_t.emplace_back(c.get_f64(p + "sal/" + std::to_string(t)));
    lc.weight = SalienceVector(c.get_f64(p + "weight"));
    lc.spearman = {c.get_f64(p + "eta"), c.get_f64(p + "rho")};
    lc.aggregation = c.get_f64(p + "aggregation");
    lc.temporal = SalienceVector(c.get_f64(p + "temporal"));
    lc.pair = {c.get_f64(p + "bx"), c.get_f64(p + "bw")};
    const auto so = c.get_f64(p + "so");
    lc.so_pre = so.at(0);
    lc.so_post = so.at(1);
    cal.layers[role] = std::move(lc);
  }
  return cal;
}

TensorContainer activations_to_container(const CalibrationSet& data) {
  TensorContainer c;
  c.put_i32("timesteps", data.timesteps);
  for (const auto& [name, acts] : data.layers) {
    for (std::size_t t = 0; t < acts.per_t.size(); ++t) {
      const auto& batch = acts.per_t[t];
      const MatrixF all = stack_rows(batch);
      // Per-sample split is kept as [samples, tokens, channels].
      c.put_f32("acts/" + name + "/" + std::to_string(data.timesteps.at(t)), all.data(),
                {batch.size(), batch.front().rows(), all.cols()});
    }
  }
  return c;
}

CalibrationSet activations_from_container(const TensorContainer& c) {
  CalibrationSet data;
  data.timesteps = c.get_i32("timesteps");
  for (const std::string& key : c.names()) {
    if (key.rfind("acts/", 0) != 0) continue;
    const auto slash = key.rfind('/');
    const std::string name = key.substr(5, slash - 5);
    const int t = std::stoi(key.substr(slash + 1));
    const auto pos = std::find(data.timesteps.begin(), data.timesteps.end(), t);
    if (pos == data.timesteps.end()) throw Error(Errc::IOFailure, "activation timestep not in index: " + key);
    const auto& e = c.entry(key);
    if (e.dtype != DType::F32 || e.shape.size() != 3) throw Error(Errc::IOFailure, key + " is malformed");
    auto& acts = data.layers[name];
    if (acts.per_t.empty()) {
      acts.per_t.resize(data.timesteps.size());
      acts.timesteps = data.timesteps;
    }
    const auto flat = c.get_f32(key);
    const std::size_t per = e.shape[1] * e.shape[2];
    auto& batch = acts.per_t[static_cast<std::size_t>(pos - data.timesteps.begin())];
    for (std::size_t s = 0; s < e.shape[0]; ++s) {
      batch.emplace_back(e.shape[1], e.shape[2],
                         std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(s * per),
                                            flat.begin() + static_cast<std::ptrdiff_t>((s + 1) * per)));
    }
  }
  for (auto& [name, acts] : data.layers) acts.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Re-parameterization and quantization

QuantizedModel quantize_model(const PipelineConfig& cfg, const DiTBlockParams& model,
                              const Calibration& cal, const CalibrationSet& data) {
  cfg.validate();
  model.validate();
  QuantizedModel q;
  for (const LayerRole r : kAllRoles) {
    BalancingPair pair = BalancingPair::identity(model.d_in);
    if (cfg.balancing.enabled(r)) {
      pair = cal.layers.at(r).pair;
      if (cfg.balancing.corrupt_bw) {
        for (double& b : pair.bw) b *= kCorruptFactor;
      }
    }
    if (r == LayerRole::FC2) pair = BalancingPair::identity(model.weight(r).rows());
    q.pairs[idx(r)] = std::move(pair);
  }

  // Offline folding, before any quantizer is fitted.
  q.folded = model;
  for (const LayerRole r : kBalancedRoles) {
    q.folded.weight(r) = fold_weight<float>(model.weight(r), model.bias(r), q.pairs[idx(r)]).w_tilde;
  }
  const bool b1 = cfg.balancing.enabled(LayerRole::Projection1);
  const bool b2 = cfg.balancing.enabled(LayerRole::Projection2);
  const bool b3 = cfg.balancing.enabled(LayerRole::FC1);
  if (b1) q.folded.adaln1 = fold_adaln(model.adaln1, q.pairs[idx(LayerRole::Projection1)]);
  if (b3) q.folded.adaln2 = fold_adaln(model.adaln2, q.pairs[idx(LayerRole::FC1)]);

  BlockRuntime& rt = q.runtime;
  rt.params = q.folded;
  if (b1) rt.adaln1_base = q.pairs[idx(LayerRole::Projection1)].bx;
  if (b3) rt.adaln2_base = q.pairs[idx(LayerRole::FC1)].bx;

  const int wbits = cfg.quant.weight_bits, abits = cfg.quant.act_bits;
  if (wbits != kFullPrecisionBits) {
    for (const LayerRole r : kAllRoles) {
      const MatrixF& w = q.folded.weight(r);
      QuantParams p = fit(cfg, w, wbits, cfg.quant.weight_granularity);
      QuantizedTensor codes = quantize(w, p);
      rt.params.weight(r) = dequantize<float>(codes);
      q.weight_params[idx(r)] = std::move(p);
      q.weight_codes[idx(r)] = std::move(codes);
    }
  }

  const bool v_quantized = abits != kFullPrecisionBits && cfg.quant.quantize_v;
  if (abits != kFullPrecisionBits) {
    for (const LayerRole r : kAllRoles) {
      const MatrixF x = pooled(data.layers.at(layer_name(r)), q.pairs[idx(r)].bx);
      rt.act_quant[idx(r)] = fit(cfg, x, abits, cfg.quant.act_granularity);
    }
  }
  if (v_quantized) {
    const MatrixF v = pooled(data.layers.at("v"));
    rt.v_quant = fit(cfg, v, abits, cfg.quant.act_granularity);
    if (b2) {
      const QuantParams per_channel = rt.v_quant->granularity == Granularity::PerTensor
                                          ? expand_per_channel(*rt.v_quant, model.d_in)
                                          : *rt.v_quant;
      rt.v_dequant = fold_dequant_scales(per_channel, q.pairs[idx(LayerRole::Projection2)]);
    }
  } else if (b2) {
    rt.proj_in_scale = q.pairs[idx(LayerRole::Projection2)].bx;
    q.proj2_explicit_scale = true;
  }
  return q;
}

BlockRuntime folded_runtime(const QuantizedModel& q) {
  BlockRuntime rt;
  rt.params = q.folded;
  rt.adaln1_base = q.runtime.adaln1_base;
  rt.adaln2_base = q.runtime.adaln2_base;
  if (q.runtime.v_dequant || !q.runtime.proj_in_scale.empty()) {
    rt.proj_in_scale = q.pairs[idx(LayerRole::Projection2)].bx;
  }
  return rt;
}

TensorContainer checkpoint_to_container(const QuantizedModel& q) {
  TensorContainer c;
  put_model(c, q.folded, "folded/");
  for (const LayerRole r : kAllRoles) {
    const std::string name = layer_name(r);
    c.put_f64("pair/" + name + "/bx", q.pairs[idx(r)].bx);
    c.put_f64("pair/" + name + "/bw", q.pairs[idx(r)].bw);
    if (q.weight_params[idx(r)]) {
      put_params(c, "w/" + name, *q.weight_params[idx(r)]);
      const auto& codes = *q.weight_codes[idx(r)];
      if (codes.params.bits <= 8) {
        std::vector<std::uint8_t> bytes(codes.codes.begin(), codes.codes.end());
        c.put_u8("w/" + name + "/codes", bytes, {codes.rows, codes.cols});
      } else {
        c.put_i32("w/" + name + "/codes", codes.codes, {codes.rows, codes.cols});
      }
    }
    if (q.runtime.act_quant[idx(r)]) put_params(c, "a/" + name, *q.runtime.act_quant[idx(r)]);
  }
  if (!q.runtime.adaln1_base.empty()) c.put_f64("base/adaln1", q.runtime.adaln1_base);
  if (!q.runtime.adaln2_base.empty()) c.put_f64("base/adaln2", q.runtime.adaln2_base);
  if (!q.runtime.proj_in_scale.empty()) c.put_f64("base/proj_in_scale", q.runtime.proj_in_scale);
  if (q.runtime.v_quant) put_params(c, "v/quant", *q.runtime.v_quant);
  if (q.runtime.v_dequant) put_params(c, "v/dequant", *q.runtime.v_dequant);
  const std::int32_t flags[1] = {q.proj2_explicit_scale ? 1 : 0};
  c.put_i32("meta/flags", flags);
  return c;
}

QuantizedModel checkpoint_from_container(const TensorContainer& c) {
  QuantizedModel q;
  q.folded = get_model(c, "folded/");
  q.runtime.params = q.folded;
  for (const LayerRole r : kAllRoles) {
    const std::string name = layer_name(r);
    q.pairs[idx(r)] = {c.get_f64("pair/" + name + "/bx"), c.get_f64("pair/" + name + "/bw")};
    if (auto p = get_params(c, "w/" + name)) {
      const auto& e = c.entry("w/" + name + "/codes");
      QuantizedTensor codes{e.shape.at(0), e.shape.at(1), {}, *p};
      if (e.dtype == DType::U8) {
        const auto bytes = c.get_u8("w/" + name + "/codes");
        codes.codes.assign(bytes.begin(), bytes.end());
      } else {
        codes.codes = c.get_i32("w/" + name + "/codes");
      }
      q.runtime.params.weight(r) = dequantize<float>(codes);
      q.weight_params[idx(r)] = std::move(p);
      q.weight_codes[idx(r)] = std::move(codes);
    }
    q.runtime.act_quant[idx(r)] = get_params(c, "a/" + name);
  }
  if (c.contains("base/adaln1")) q.runtime.adaln1_base = c.get_f64("base/adaln1");
  if (c.contains("base/adaln2")) q.runtime.adaln2_base = c.get_f64("base/adaln2");
  if (c.contains("base/proj_in_scale")) q.runtime.proj_in_scale = c.get_f64("base/proj_in_scale");
  q.runtime.v_quant = get_params(c, "v/quant");
  q.runtime.v_dequant = get_params(c, "v/dequant");
  q.proj2_explicit_scale = c.get_i32("meta/flags").at(0) != 0;
  return q;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(const PipelineConfig& cfg, const DiTBlockParams& model, const Calibration& cal,
                    const QuantizedModel& q) {
  const auto inputs = eval_inputs(cfg);
  const std::size_t n = inputs.size();

  struct PerInput {
    std::array<double, 4> a_err{}, out_err{};
    double block_err = 0.0;
    double rel_dev = 0.0;
  };
  std::vector<PerInput> per(n);
  BlockRuntime plain;
  plain.params = model;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    BlockTaps taps;
    const MatrixF ref = forward_runtime(plain, inputs[i].z, inputs[i].c, &taps);
    const MatrixF got = forward_runtime(q.runtime, inputs[i].z, inputs[i].c);
    for (std::size_t k = 0; k < ref.size(); ++k) {
      const double d = static_cast<double>(got.data()[k]) - static_cast<double>(ref.data()[k]);
      per[i].block_err += d * d;
    }
    per[i].rel_dev = relative_deviation(got, ref);
    for (const LayerRole r : kAllRoles) {
      const auto& bx = q.pairs[idx(r)].bx;
      const MatrixF& x = taps.input(r);
      const MatrixF xt = scale_columns(x, bx);
      const auto& aq = q.runtime.act_quant[idx(r)];
      const MatrixF xq = aq ? fake_quantize(xt, *aq) : xt;
      for (std::size_t a = 0; a < x.rows(); ++a) {
        for (std::size_t b = 0; b < x.cols(); ++b) {
          const double e = (static_cast<double>(xt(a, b)) - static_cast<double>(xq(a, b))) / bx[b];
          per[i].a_err[idx(r)] += e * e;
        }
      }
      const MatrixF yq = kernels::matmul(xq, q.runtime.params.weight(r));
      const MatrixF y = kernels::matmul(x, model.weight(r));
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double e = static_cast<double>(yq.data()[k]) - static_cast<double>(y.data()[k]);
        per[i].out_err[idx(r)] += e * e;
      }
    }
  }

  EvalReport rep;
  rep.config_hash = config_hash(cfg);
  rep.seed = cfg.seed;
  rep.proj2_explicit_scale = q.proj2_explicit_scale;
  const double out_elems = static_cast<double>(n * cfg.model.tokens * model.d_in);
  std::vector<double> devs(n);
  for (std::size_t i = 0; i < n; ++i) {
    rep.block_mse += per[i].block_err;
    devs[i] = per[i].rel_dev;
  }
  rep.block_mse /= out_elems;
  rep.block_rel_dev = stats_of(devs);

  for (const LayerRole r : kAllRoles) {
    LayerMetrics m;
    m.role = r;
    m.balanced = cfg.balancing.enabled(r);
    const auto& bx = q.pairs[idx(r)].bx;
    const MatrixF& wt = q.folded.weight(r);
    const MatrixF& wq = q.runtime.params.weight(r);
    for (std::size_t a = 0; a < wt.rows(); ++a) {
      for (std::size_t b = 0; b < wt.cols(); ++b) {
        const double e = bx[a] * (static_cast<double>(wt(a, b)) - static_cast<double>(wq(a, b)));
        m.w_mse += e * e;
      }
    }
    m.w_mse /= static_cast<double>(wt.size());
    const double in_elems = static_cast<double>(n * cfg.model.tokens * wt.rows());
    const double y_elems = static_cast<double>(n * cfg.model.tokens * wt.cols());
    for (std::size_t i = 0; i < n; ++i) {
      m.a_mse += per[i].a_err[idx(r)];
      m.out_mse += per[i].out_err[idx(r)];
    }
    m.a_mse /= in_elems;
    m.out_mse /= y_elems;
    if (const auto it = cal.layers.find(r); it != cal.layers.end()) {
      m.so_pre = it->second.so_pre;
      m.so_post = m.balanced ? it->second.so_post : it->second.so_pre;
      m.rho = it->second.spearman.rho;
      m.eta = it->second.spearman.eta;
      m.aggregation = it->second.aggregation;
    }
    rep.layers.push_back(std::move(m));
  }
  rep.equivalence = check_equivalence(model, q, inputs, cfg.eval.tolerance);
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  json layers_json = json::array();
  for (const auto& m : layers) {
    layers_json.push_back({{"layer", layer_name(m.role)},
                           {"role", role_name(m.role)},
                           {"balanced", m.balanced},
                           {"w_mse", m.w_mse},
                           {"a_mse", m.a_mse},
                           {"out_mse", m.out_mse},
                           {"so_pre", m.so_pre},
                           {"so_post", m.so_post},
                           {"rho", m.rho},
                           {"eta", m.eta},
                           {"aggregation", m.aggregation}});
  }
  const auto dev = [](const DeviationStats& s) {
    return json{{"min", s.min}, {"median", s.median}, {"p90", s.p90}, {"max", s.max}, {"mean", s.mean}};
  };
  return {{"provenance", {{"config_hash", config_hash}, {"seed", seed}, {"version", version}}},
          {"layers", layers_json},
          {"block", {{"mse", block_mse}, {"rel_dev", dev(block_rel_dev)}}},
          {"equivalence",
           {{"mode", "full_precision_folded"},
            {"max_deviation", equivalence.max_deviation},
            {"worst_index", equivalence.worst_index},
            {"tolerance", equivalence.tolerance},
            {"passed", equivalence.passed},
            {"proj2_explicit_scale", proj2_explicit_scale}}}};
}

std::string EvalReport::per_layer_csv() const {
  std::string out = "layer,role,w_mse,a_mse,out_mse,so_pre,so_post\n";
  for (const auto& m : layers) {
    out += std::string(layer_name(m.role)) + "," + role_name(m.role) + "," + fmt(m.w_mse) + "," +
           fmt(m.a_mse) + "," + fmt(m.out_mse) + "," + fmt(m.so_pre) + "," + fmt(m.so_post) + "\n";
  }
  return out;
}

EvalReport run_in_memory(const PipelineConfig& cfg) {
  const DiTBlockParams model = build_model(cfg);
  CalibrationSet data;
  const Calibration cal = calibrate(cfg, model, data);
  const QuantizedModel q = quantize_model(cfg, model, cal, data);
  return evaluate(cfg, model, cal, q);
}

// ---------------------------------------------------------------------------
// Commands

ArtifactLock::ArtifactLock(const fs::path& dir) : path_(dir / kLockFile) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IOFailure, "cannot create artifact directory '" + dir.string() + "'");
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw Error(Errc::IOFailure, "artifact directory '" + dir.string() +
                                     "' is locked by another run (remove " + path_.string() + " if stale)");
  }
  ::close(fd);
}

ArtifactLock::~ArtifactLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void run_calibrate(const PipelineConfig& cfg) {
  ArtifactLock lock(cfg.artifacts);
  const DiTBlockParams model = build_model(cfg);
  CalibrationSet data;
  const Calibration cal = calibrate(cfg, model, data);
  TensorContainer mc;
  put_model(mc, model);
  mc.save(fs::path(cfg.artifacts) / kModelFile);
  calibration_to_container(cal).save(fs::path(cfg.artifacts) / kCalibrationFile);
  activations_to_container(data).save(fs::path(cfg.artifacts) / kActivationsFile);
}

void run_quantize(const PipelineConfig& cfg) {
  ArtifactLock lock(cfg.artifacts);
  const DiTBlockParams model = get_model(load_artifact(cfg, kModelFile));
  const Calibration cal = calibration_from_container(load_artifact(cfg, kCalibrationFile));
  const CalibrationSet data = activations_from_container(load_artifact(cfg, kActivationsFile));
  const QuantizedModel q = quantize_model(cfg, model, cal, data);
  checkpoint_to_container(q).save(fs::path(cfg.artifacts) / kCheckpointFile);
}

EvalReport run_evaluate(const PipelineConfig& cfg) {
  ArtifactLock lock(cfg.artifacts);
  const DiTBlockParams model = get_model(load_artifact(cfg, kModelFile));
  const Calibration cal = calibration_from_container(load_artifact(cfg, kCalibrationFile));
  const QuantizedModel q = checkpoint_from_container(load_artifact(cfg, kCheckpointFile));
  EvalReport rep = evaluate(cfg, model, cal, q);
  write_text(fs::path(cfg.artifacts) / kReportFile, rep.to_json().dump(2) + "\n");
  write_text(fs::path(cfg.artifacts) / kPerLayerCsv, rep.per_layer_csv());
  return rep;
}

void run_challenge(const PipelineConfig& cfg) {
  ArtifactLock lock(cfg.artifacts);
  const DiTBlockParams model = build_model(cfg);
  const auto ts = calibration_timesteps(cfg);
  const auto data = gen_calibration(model, ts, cfg.calibration.samples_per_t, cfg.model.tokens,
                                    act_profile(cfg, ts), purpose_seed(cfg.seed, SeedPurpose::Calibration), cfg.model.cond_std);
  const int bits = cfg.quant.weight_bits == kFullPrecisionBits ? 4 : cfg.quant.weight_bits;
  const auto& designated = cfg.model.act_profile.channels;

  std::string summary = "layer,bits,act_rank_corr,weight_rank_corr,designated_min_ratio\n";
  std::string channels = "layer,channel,act_salience,act_mse,weight_salience,weight_mse,temporal_ratio,temporal_cv,designated\n";
  std::string steps = "layer,timestep,min,q25,median,q75,max\n";
  for (const LayerRole r : kAllRoles) {
    const std::string name = layer_name(r);
    const ChallengeReport rep = challenge_report(data.layers.at(name), model.weight(r), bits);
    double min_ratio = designated.empty() ? 0.0 : INFINITY;
    for (const auto ch : designated) min_ratio = std::min(min_ratio, rep.temporal_ratio.at(ch));
    summary += name + "," + std::to_string(bits) + "," + fmt(rep.act_rank_corr) + "," +
               fmt(rep.weight_rank_corr) + "," + fmt(min_ratio) + "\n";
    for (std::size_t j = 0; j < rep.act_salience.size(); ++j) {
      const bool is_designated = std::find(designated.begin(), designated.end(), j) != designated.end();
      channels += name + "," + std::to_string(j) + "," + fmt(rep.act_salience[j]) + "," +
                  fmt(rep.act_mse[j]) + "," + fmt(rep.weight_salience[j]) + "," + fmt(rep.weight_mse[j]) +
                  "," + fmt(rep.temporal_ratio[j]) + "," + fmt(rep.temporal_cv[j]) + "," +
                  (is_designated ? "1" : "0") + "\n";
    }
    for (std::size_t t = 0; t < rep.timestep_quantiles.size(); ++t) {
      const auto& qv = rep.timestep_quantiles[t];
      steps += name + "," + std::to_string(ts[t]) + "," + fmt(qv[0]) + "," + fmt(qv[1]) + "," +
               fmt(qv[2]) + "," + fmt(qv[3]) + "," + fmt(qv[4]) + "\n";
    }
  }
  write_text(fs::path(cfg.artifacts) / "challenge_summary.csv", summary);
  write_text(fs::path(cfg.artifacts) / "challenge_channels.csv", channels);
  write_text(fs::path(cfg.artifacts) / "challenge_timesteps.csv", steps);
}

bool VerifyResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
}

VerifyResult run_verify(const PipelineConfig& cfg) {
  ArtifactLock lock(cfg.artifacts);
  VerifyResult res;
  auto add = [&](std::string name, bool ok, std::string detail) {
    res.checks.push_back({std::move(name), ok, std::move(detail)});
  };

  bool roundtrip = true;
  std::string rt_detail;
  for (const char* file : {kModelFile, kCalibrationFile, kActivationsFile, kCheckpointFile}) {
    const auto bytes = read_bytes(fs::path(cfg.artifacts) / file);
    const bool same = TensorContainer::parse(bytes).serialize() == bytes;
    roundtrip = roundtrip && same;
    rt_detail += std::string(file) + (same ? "=ok " : "=MISMATCH ");
  }
  add("container_roundtrip", roundtrip, rt_detail);

  const DiTBlockParams model = get_model(load_artifact(cfg, kModelFile));
  const Calibration cal = calibration_from_container(load_artifact(cfg, kCalibrationFile));
  const QuantizedModel q = checkpoint_from_container(load_artifact(cfg, kCheckpointFile));

  double inv = 0.0;
  for (const auto& p : q.pairs) inv = std::max(inv, p.max_inverse_error());
  add("pair_mutual_inverse", inv <= 1e-12, "max |bx*bw - 1| = " + fmt(inv));

  bool eta_ok = true;
  double eta_sum_err = 0.0;
  for (const auto& [role, lc] : cal.layers) {
    const auto& eta = lc.spearman.eta;
    const auto& rho = lc.spearman.rho;
    eta_sum_err = std::max(eta_sum_err, std::abs(std::accumulate(eta.begin(), eta.end(), 0.0) - 1.0));
    for (std::size_t a = 0; a < eta.size(); ++a) {
      if (!(eta[a] > 0.0)) eta_ok = false;
      for (std::size_t b = 0; b < eta.size(); ++b) {
        if (rho[a] < rho[b] && !(eta[a] > eta[b])) eta_ok = false;
      }
    }
  }
  add("eta_normalized_and_ordered", eta_ok && eta_sum_err <= 1e-12, "max |sum eta - 1| = " + fmt(eta_sum_err));

  bool codes_ok = true;
  for (const auto& codes : q.weight_codes) {
    if (!codes) continue;
    for (const auto v : codes->codes) codes_ok = codes_ok && v >= 0 && v <= codes->params.qmax();
  }
  add("weight_codes_in_range", codes_ok, "");

  bool bias_ok = true;
  for (const LayerRole r : kAllRoles) bias_ok = bias_ok && q.folded.bias(r) == model.bias(r);
  add("bias_neutral", bias_ok, "");

  if (q.runtime.v_quant && q.runtime.v_dequant) {
    const CalibrationSet data = activations_from_container(load_artifact(cfg, kActivationsFile));
    const MatrixF v = pooled(data.layers.at("v"));
    const QuantizedTensor codes = quantize(v, *q.runtime.v_quant);
    const MatrixD folded = dequantize_with<double>(codes, *q.runtime.v_dequant);
    const MatrixD plain = dequantize<double>(codes);
    const auto& bx = q.pairs[idx(LayerRole::Projection2)].bx;
    double worst = 0.0;
    for (std::size_t a = 0; a < v.rows(); ++a) {
      for (std::size_t b = 0; b < v.cols(); ++b) {
        const double want = plain(a, b) * bx[b];
        if (want != 0.0) worst = std::max(worst, std::abs(folded(a, b) - want) / std::abs(want));
        else worst = std::max(worst, std::abs(folded(a, b)));
      }
    }
    add("dequant_fold", worst <= 4.0 * std::numeric_limits<double>::epsilon(),
        "max relative deviation = " + fmt(worst));
  }

  const auto inputs = eval_inputs(cfg);
  const EquivalenceReport eq = check_equivalence(model, q, inputs, cfg.eval.tolerance);
  add("fold_equivalence", eq.passed,
      "max relative deviation = " + fmt(eq.max_deviation) + " at input " + std::to_string(eq.worst_index) +
          " (tolerance " + fmt(eq.tolerance) + ")");
  return res;
}

}  // namespace sq
