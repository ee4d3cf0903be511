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

#include "sq/dit_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sq/kernels.hpp"
#include "sq/seed.hpp"

namespace sq {
namespace {

// adaLN regression: off-diagonal noise scale and per-channel bias spread.
constexpr double kModNoise = 0.1;
constexpr double kModBiasStd = 0.5;
constexpr double kLinearBiasStd = 0.02;

void fill_normal(std::mt19937_64& rng, std::span<float> dst, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : dst) v = static_cast<float>(dist(rng));
}

MatrixF normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  MatrixF m(rows, cols);
  fill_normal(rng, m.data(), stddev);
  return m;
}

std::vector<float> normal_vector(std::mt19937_64& rng, std::size_t n, double stddev) {
  std::vector<float> v(n);
  fill_normal(rng, v, stddev);
  return v;
}

AdaLNParams<float> init_adaln(std::mt19937_64& rng, std::size_t d) {
  const double noise = kModNoise / std::sqrt(static_cast<double>(d));
  AdaLNParams<float> p{normal_matrix(rng, d, d, noise), normal_matrix(rng, d, d, noise),
                       normal_vector(rng, d, kModBiasStd), normal_vector(rng, d, kModBiasStd)};
  for (std::size_t k = 0; k < d; ++k) {
    p.w_gamma(k, k) += static_cast<float>(kCondCoupling);
    p.w_beta(k, k) += static_cast<float>(kCondCoupling);
  }
  return p;
}

void scale_profile_rows(MatrixF& w, const SalienceProfile& profile) {
  for (std::size_t i = 0; i < profile.channels.size(); ++i) {
    for (float& v : w.row(profile.channels[i])) v = static_cast<float>(v * profile.magnitude[i]);
  }
}

MatrixF linear(const MatrixF& x, const MatrixF& w, const std::vector<float>& b) {
  MatrixF y = kernels::matmul(x, w);
  if (!b.empty()) {
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto r = y.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
    }
  }
  return y;
}

MatrixF maybe_fake_quantize(const MatrixF& x, const std::optional<QuantParams>& p) {
  return p ? fake_quantize(x, *p) : x;
}

MatrixF adaln_with_base(const MatrixF& z, const AdaLNParams<float>& p,
                        const std::vector<double>& base, std::span<const float> c) {
  if (base.empty()) return adaln_forward(z, p, c);
  return balanced_adaln_forward(z, p, BalancingPair{base, base}, c);
}

// Multi-head softmax(Q K^T / sqrt(d_head)) V with row-wise max subtraction.
MatrixF attention(const MatrixF& q, const MatrixF& k, const MatrixF& v, std::size_t heads) {
  const std::size_t n = q.rows(), d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MatrixF out(n, d);
  std::vector<double> logits(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      double top = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) {
          s += static_cast<double>(q(i, off + e)) * static_cast<double>(k(j, off + e));
        }
        logits[j] = s * scale;
        top = std::max(top, logits[j]);
      }
      double total = 0.0;
      for (double& l : logits) {
        l = std::exp(l - top);
        total += l;
      }
      for (std::size_t e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += logits[j] * static_cast<double>(v(j, off + e));
        out(i, off + e) = static_cast<float>(acc / total);
      }
    }
  }
  return out;
}

MatrixF column_slice(const MatrixF& m, std::size_t begin, std::size_t count) {
  MatrixF out(m.rows(), count);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = m(i, begin + j);
  }
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

const char* layer_name(LayerRole role) noexcept {
  switch (role) {
    case LayerRole::Projection1: return "proj1";
    case LayerRole::Projection2: return "proj2";
    case LayerRole::FC1: return "fc1";
    case LayerRole::FC2: return "fc2";
  }
  return "?";
}

const char* role_name(LayerRole role) noexcept {
  switch (role) {
    case LayerRole::Projection1: return "post_adaln";
    case LayerRole::Projection2: return "post_matmul";
    case LayerRole::FC1: return "post_adaln";
    case LayerRole::FC2: return "unbalanced";
  }
  return "?";
}

LayerRole layer_from_name(const std::string& name) {
  for (const LayerRole r : kAllRoles) {
    if (name == layer_name(r)) return r;
  }
  throw Error(Errc::ConfigError, "unknown layer name '" + name + "'");
}

void SalienceProfile::validate(std::size_t channels_total, std::size_t steps) const {
  if (magnitude.size() != channels.size()) {
    throw Error(Errc::InvalidProfile, "one magnitude per salient channel is required");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] >= channels_total) throw Error(Errc::InvalidProfile, "salient channel out of range");
    if (!(magnitude[i] > 0.0) || !std::isfinite(magnitude[i])) {
      throw Error(Errc::InvalidProfile, "magnitudes must be positive");
    }
  }
  if (steps != 0 && !drift.empty() && drift.size() != steps) {
    throw Error(Errc::InvalidProfile, "drift schedule length differs from timestep count");
  }
  for (const double m : drift) {
    if (!(m > 0.0) || !std::isfinite(m)) throw Error(Errc::InvalidProfile, "drift multipliers must be positive");
  }
}

const MatrixF& DiTBlockParams::weight(LayerRole role) const {
  switch (role) {
    case LayerRole::Projection1: return w_qkv;
    case LayerRole::Projection2: return w_proj;
    case LayerRole::FC1: return w_fc1;
    case LayerRole::FC2: return w_fc2;
  }
  return w_qkv;
}

MatrixF& DiTBlockParams::weight(LayerRole role) {
  return const_cast<MatrixF&>(static_cast<const DiTBlockParams&>(*this).weight(role));
}

const std::vector<float>& DiTBlockParams::bias(LayerRole role) const {
  switch (role) {
    case LayerRole::Projection1: return b_qkv;
    case LayerRole::Projection2: return b_proj;
    case LayerRole::FC1: return b_fc1;
    case LayerRole::FC2: return b_fc2;
  }
  return b_qkv;
}

void DiTBlockParams::validate() const {
  const std::size_t d = d_in, hidden = mlp_ratio * d_in;
  if (d == 0 || heads == 0 || mlp_ratio == 0 || d % heads != 0) {
    throw Error(Errc::InvalidShape, "d_in must be positive and divisible by heads");
  }
  auto check = [](const MatrixF& m, std::size_t r, std::size_t c, const std::vector<float>& b) {
    if (m.rows() != r || m.cols() != c || b.size() != c) {
      throw Error(Errc::InvalidShape, "linear layer shape mismatch");
    }
  };
  check(w_qkv, d, 3 * d, b_qkv);
  check(w_proj, d, d, b_proj);
  check(w_fc1, d, hidden, b_fc1);
  check(w_fc2, hidden, d, b_fc2);
  adaln1.validate();
  adaln2.validate();
  if (adaln1.channels() != d || adaln2.channels() != d || adaln2.cond_dim() != adaln1.cond_dim()) {
    throw Error(Errc::InvalidShape, "adaLN width mismatch");
  }
}

const MatrixF& BlockTaps::input(LayerRole role) const {
  switch (role) {
    case LayerRole::Projection1: return qkv_in;
    case LayerRole::Projection2: return proj_in;
    case LayerRole::FC1: return fc1_in;
    case LayerRole::FC2: return fc2_in;
  }
  return qkv_in;
}

DiTBlockParams init_block(std::size_t d_in, std::size_t heads, std::size_t mlp_ratio,
                          std::uint64_t seed, const SalienceProfile& weight_profile) {
  if (d_in == 0 || heads == 0 || mlp_ratio == 0 || d_in % heads != 0) {
    throw Error(Errc::InvalidShape, "d_in must be positive and divisible by heads");
  }
  weight_profile.validate(d_in);
  std::mt19937_64 rng(seed);
  DiTBlockParams p;
  p.d_in = d_in;
  p.heads = heads;
  p.mlp_ratio = mlp_ratio;
  const std::size_t hidden = mlp_ratio * d_in;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d_in));
  const double s_hidden = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.adaln1 = init_adaln(rng, d_in);
  p.adaln2 = init_adaln(rng, d_in);
  p.w_qkv = normal_matrix(rng, d_in, 3 * d_in, s_in);
  p.b_qkv = normal_vector(rng, 3 * d_in, kLinearBiasStd);
  p.w_proj = normal_matrix(rng, d_in, d_in, s_in);
  p.b_proj = normal_vector(rng, d_in, kLinearBiasStd);
  p.w_fc1 = normal_matrix(rng, d_in, hidden, s_in);
  p.b_fc1 = normal_vector(rng, hidden, kLinearBiasStd);
  p.w_fc2 = normal_matrix(rng, hidden, d_in, s_hidden);
  p.b_fc2 = normal_vector(rng, d_in, kLinearBiasStd);
  for (const LayerRole r : kBalancedRoles) scale_profile_rows(p.weight(r), weight_profile);
  return p;
}

float gelu(float x) noexcept {
  const double v = static_cast<double>(x);
  return static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
}

MatrixF forward_runtime(const BlockRuntime& rt, const MatrixF& z, std::span<const float> c,
                        BlockTaps* taps) {
  const DiTBlockParams& p = rt.params;
  const std::size_t d = p.d_in;
  if (z.cols() != d) throw Error(Errc::ShapeMismatch, "latent width differs from d_in");
  if (c.size() != p.adaln1.cond_dim()) throw Error(Errc::ShapeMismatch, "conditioning length mismatch");
  const auto act = [&](LayerRole r) -> const std::optional<QuantParams>& {
    return rt.act_quant[static_cast<std::size_t>(r)];
  };

  // Attention branch.
  MatrixF x1 = adaln_with_base(z, p.adaln1, rt.adaln1_base, c);
  MatrixF qkv = linear(maybe_fake_quantize(x1, act(LayerRole::Projection1)), p.w_qkv, p.b_qkv);
  MatrixF q = column_slice(qkv, 0, d), k = column_slice(qkv, d, d), v = column_slice(qkv, 2 * d, d);
  if (taps) {
    taps->qkv_in = std::move(x1);
    taps->v = v;
  }
  if (rt.v_quant) {
    const QuantizedTensor codes = quantize(v, *rt.v_quant);
    v = dequantize_with<float>(codes, rt.v_dequant ? *rt.v_dequant : *rt.v_quant);
  }
  MatrixF o = attention(q, k, v, p.heads);
  if (!rt.proj_in_scale.empty()) o = scale_columns(o, rt.proj_in_scale);
  MatrixF y = linear(maybe_fake_quantize(o, act(LayerRole::Projection2)), p.w_proj, p.b_proj);
  if (taps) taps->proj_in = std::move(o);
  MatrixF r1 = z;
  for (std::size_t i = 0; i < r1.size(); ++i) r1.data()[i] += y.data()[i];

  // Feedforward branch.
  MatrixF x2 = adaln_with_base(r1, p.adaln2, rt.adaln2_base, c);
  MatrixF h = linear(maybe_fake_quantize(x2, act(LayerRole::FC1)), p.w_fc1, p.b_fc1);
  for (float& v2 : h.data()) v2 = gelu(v2);
  MatrixF y2 = linear(maybe_fake_quantize(h, act(LayerRole::FC2)), p.w_fc2, p.b_fc2);
  if (taps) {
    taps->fc1_in = std::move(x2);
    taps->fc2_in = std::move(h);
  }
  for (std::size_t i = 0; i < r1.size(); ++i) r1.data()[i] += y2.data()[i];
  return r1;
}

BlockOutput forward_block(const DiTBlockParams& p, const MatrixF& z, std::span<const float> c) {
  p.validate();
  BlockRuntime rt;
  rt.params = p;
  BlockOutput out;
  out.out = forward_runtime(rt, z, c, &out.taps);
  return out;
}

std::vector<int> select_timesteps(int schedule_steps, std::size_t count) {
  if (count == 0 || schedule_steps < static_cast<int>(count)) {
    throw Error(Errc::ConfigError, "need 1 <= timesteps <= schedule_steps");
  }
  std::vector<int> out(count);
  const int stride = schedule_steps / static_cast<int>(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<int>(i) * stride;
  return out;
}

DriftKind drift_kind_from_name(const std::string& name) {
  if (name == "flat") return DriftKind::Flat;
  if (name == "linear") return DriftKind::Linear;
  if (name == "vshape") return DriftKind::VShape;
  if (name == "peak") return DriftKind::Peak;
  throw Error(Errc::ConfigError, "unknown drift kind '" + name + "'");
}

const char* drift_kind_name(DriftKind kind) noexcept {
  switch (kind) {
    case DriftKind::Flat: return "flat";
    case DriftKind::Linear: return "linear";
    case DriftKind::VShape: return "vshape";
    case DriftKind::Peak: return "peak";
  }
  return "?";
}

std::vector<double> drift_schedule(DriftKind kind, double swing, std::span<const int> timesteps,
                                   int schedule_steps) {
  if (!(swing >= 1.0)) throw Error(Errc::InvalidProfile, "drift swing must be >= 1");
  std::vector<double> out(timesteps.size(), 1.0);
  const double span = std::max(1, schedule_steps - 1);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const double u = static_cast<double>(timesteps[i]) / span;
    const double edge = std::abs(2.0 * u - 1.0);
    switch (kind) {
      case DriftKind::Flat: break;
      case DriftKind::Linear: out[i] = 1.0 + (swing - 1.0) * u; break;
      case DriftKind::VShape: out[i] = 1.0 + (swing - 1.0) * edge; break;
      case DriftKind::Peak: out[i] = 1.0 + (swing - 1.0) * (1.0 - edge); break;
    }
  }
  return out;
}

std::vector<BlockInput> gen_inputs(std::size_t d_in, std::size_t tokens, std::size_t steps,
                                   std::size_t samples_per_t, const SalienceProfile& act_profile,
                                   std::uint64_t seed, double cond_std) {
  if (steps == 0 || samples_per_t == 0 || tokens == 0) {
    throw Error(Errc::InvalidProfile, "timesteps, samples and tokens must be positive");
  }
  act_profile.validate(d_in, steps);
  std::vector<BlockInput> inputs(steps * samples_per_t);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t idx = 0; idx < static_cast<std::ptrdiff_t>(inputs.size()); ++idx) {
    const std::size_t t = static_cast<std::size_t>(idx) / samples_per_t;
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(idx)));
    BlockInput& in = inputs[idx];
    in.t_index = t;
    in.z = normal_matrix(rng, tokens, d_in, 1.0);
    in.c = normal_vector(rng, d_in, cond_std);
    for (std::size_t i = 0; i < act_profile.channels.size(); ++i) {
      in.c[act_profile.channels[i]] += static_cast<float>(act_profile.magnitude[i] * act_profile.drift_at(t));
    }
  }
  return inputs;
}

CalibrationSet gen_calibration(const DiTBlockParams& p, std::span<const int> timesteps,
                               std::size_t samples_per_t, std::size_t tokens,
                               const SalienceProfile& act_profile, std::uint64_t seed,
                               double cond_std) {
  p.validate();
  const auto inputs =
      gen_inputs(p.d_in, tokens, timesteps.size(), samples_per_t, act_profile, seed, cond_std);
  std::vector<BlockTaps> taps(inputs.size());
  BlockRuntime rt;
  rt.params = p;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(inputs.size()); ++i) {
    forward_runtime(rt, inputs[i].z, inputs[i].c, &taps[i]);
  }

  CalibrationSet set;
  set.timesteps.assign(timesteps.begin(), timesteps.end());
  auto slot = [&](const std::string& name) -> TimestepActivations& {
    auto& a = set.layers[name];
    if (a.per_t.empty()) {
      a.per_t.resize(timesteps.size());
      a.timesteps = set.timesteps;
    }
    return a;
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t t = inputs[i].t_index;
    for (const LayerRole r : kAllRoles) slot(layer_name(r)).per_t[t].push_back(taps[i].input(r));
    slot("v").per_t[t].push_back(taps[i].v);
  }
  return set;
}

ChallengeReport challenge_report(const TimestepActivations& acts, const MatrixF& w, int bits) {
  acts.validate();
  const std::size_t d = acts.channels();
  if (w.rows() != d) throw Error(Errc::ShapeMismatch, "weight rows differ from activation channels");
  ChallengeReport rep;

  std::size_t rows = 0;
  for (const auto& batch : acts.per_t) {
    for (const auto& m : batch) rows += m.rows();
  }
  MatrixF pooled(rows, d);
  std::size_t at = 0;
  for (const auto& batch : acts.per_t) {
    for (const auto& m : batch) {
      std::copy(m.data().begin(), m.data().end(), pooled.data().begin() + at * d);
      at += m.rows();
    }
  }

  rep.act_salience = kernels::column_abs_max(pooled);
  const MatrixF act_fq = fake_quantize(pooled, fit_minmax(pooled, bits, Granularity::PerTensor));
  rep.act_mse.assign(d, 0.0);
  for (std::size_t i = 0; i < pooled.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double e = static_cast<double>(pooled(i, j)) - static_cast<double>(act_fq(i, j));
      rep.act_mse[j] += e * e;
    }
  }
  for (double& m : rep.act_mse) m /= static_cast<double>(pooled.rows());

  rep.weight_salience = kernels::row_abs_max(w);
  const MatrixF w_fq = fake_quantize(w, fit_minmax(w, bits, Granularity::PerOutputChannel));
  rep.weight_mse.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const double e = static_cast<double>(w(i, j)) - static_cast<double>(w_fq(i, j));
      rep.weight_mse[i] += e * e;
    }
    rep.weight_mse[i] /= static_cast<double>(w.cols());
  }
  if (d >= 2) {
    rep.act_rank_corr = spearman_rho(rep.act_salience, rep.act_mse);
    rep.weight_rank_corr = spearman_rho(rep.weight_salience, rep.weight_mse);
  }

  std::vector<std::vector<double>> per_t;
  for (const auto& batch : acts.per_t) {
    const auto s = activation_salience<float>(batch);
    per_t.emplace_back(s.values().begin(), s.values().end());
    rep.timestep_quantiles.push_back({quantile(per_t.back(), 0.0), quantile(per_t.back(), 0.25),
                                      quantile(per_t.back(), 0.5), quantile(per_t.back(), 0.75),
                                      quantile(per_t.back(), 1.0)});
  }
  rep.temporal_ratio.assign(d, 1.0);
  rep.temporal_cv.assign(d, 0.0);
  const double steps = static_cast<double>(per_t.size());
  for (std::size_t j = 0; j < d; ++j) {
    double lo = INFINITY, hi = 0.0, sum = 0.0, sq = 0.0;
    for (const auto& s : per_t) {
      lo = std::min(lo, s[j]);
      hi = std::max(hi, s[j]);
      sum += s[j];
      sq += s[j] * s[j];
    }
    const double mean = sum / steps;
    rep.temporal_ratio[j] = lo > 0.0 ? hi / lo : (hi > 0.0 ? INFINITY : 1.0);
    const double var = std::max(0.0, sq / steps - mean * mean);
    rep.temporal_cv[j] = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  }
  return rep;
}

}  // namespace sq
