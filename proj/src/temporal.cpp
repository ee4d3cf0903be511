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

#include "sq/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sq {

std::size_t TimestepActivations::channels() const {
  if (per_t.empty() || per_t.front().empty()) return 0;
  return per_t.front().front().cols();
}

void TimestepActivations::validate() const {
  if (per_t.empty()) throw Error(Errc::EmptyBatch, "no timesteps");
  if (timesteps.size() != per_t.size()) {
    throw Error(Errc::ShapeMismatch, "timestep index count differs from batch count");
  }
  const std::size_t d = channels();
  for (std::size_t t = 0; t < per_t.size(); ++t) {
    if (per_t[t].empty()) throw Error(Errc::EmptyBatch, "empty batch at a timestep");
    for (const auto& m : per_t[t]) {
      if (m.cols() != d) throw Error(Errc::ShapeMismatch, "mixed channel counts across timesteps");
    }
    if (t > 0 && timesteps[t] <= timesteps[t - 1]) {
      throw Error(Errc::InvalidParams, "timesteps must be strictly increasing");
    }
  }
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    // Positions i..j-1 share the mean of 1-based ranks i+1..j.
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

double spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "spearman_rho: lengths differ");
  if (a.size() < 2) throw Error(Errc::TooShort, "spearman_rho needs at least two observations");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw Error(Errc::NonFiniteInput, "spearman_rho: non-finite input");
    }
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  // Both rank vectors have mean (n + 1) / 2 exactly.
  const double mean = 0.5 * static_cast<double>(a.size() + 1);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - mean, db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

SpearmanWeights eta_weights(std::span<const SalienceVector> saliences, const SalienceVector& sw) {
  if (saliences.empty()) throw Error(Errc::EmptyBatch, "eta_weights: no timesteps");
  SpearmanWeights w;
  w.rho.reserve(saliences.size());
  for (const auto& s : saliences) {
    if (s.size() != sw.size()) throw Error(Errc::ShapeMismatch, "eta_weights: salience length mismatch");
    w.rho.push_back(spearman_rho(s.values(), sw.values()));
  }
  // softmax(-rho) with the largest logit subtracted.
  const double top = -*std::min_element(w.rho.begin(), w.rho.end());
  w.eta.resize(w.rho.size());
  double total = 0.0;
  for (std::size_t t = 0; t < w.rho.size(); ++t) {
    w.eta[t] = std::exp(-w.rho[t] - top);
    total += w.eta[t];
  }
  for (double& e : w.eta) e /= total;
  return w;
}

SalienceVector temporal_salience(std::span<const SalienceVector> saliences,
                                 std::span<const double> weights) {
  if (saliences.empty()) throw Error(Errc::EmptyBatch, "temporal_salience: no timesteps");
  if (weights.size() != saliences.size()) {
    throw Error(Errc::ShapeMismatch, "temporal_salience: weight count mismatch");
  }
  const std::size_t d = saliences.front().size();
  std::vector<double> out(d, 0.0);
  for (std::size_t t = 0; t < saliences.size(); ++t) {
    if (saliences[t].size() != d) throw Error(Errc::ShapeMismatch, "temporal_salience: length mismatch");
    for (std::size_t j = 0; j < d; ++j) out[j] += weights[t] * saliences[t][j];
  }
  // A convex combination can overshoot its extremes by an ulp; keep it inside.
  for (std::size_t j = 0; j < d; ++j) {
    double lo = saliences.front()[j], hi = lo;
    for (const auto& s : saliences) {
      lo = std::min(lo, s[j]);
      hi = std::max(hi, s[j]);
    }
    out[j] = std::clamp(out[j], lo, hi);
  }
  return SalienceVector(std::move(out));
}

LayerCalibration calibrate_layer(const TimestepActivations& acts, const MatrixF& w,
                                 const CalibrateOptions& opts) {
  acts.validate();
  if (w.rows() != acts.channels()) {
    throw Error(Errc::ShapeMismatch, "weight rows differ from activation channels");
  }
  LayerCalibration cal;
  cal.per_t.resize(acts.steps());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(acts.steps()); ++t) {
    cal.per_t[t] = activation_salience<float>(acts.per_t[t]);
  }
  cal.weight = weight_salience(w);
  cal.spearman = eta_weights(cal.per_t, cal.weight);
  if (opts.ssc) {
    cal.aggregation = cal.spearman.eta;
  } else {
    cal.aggregation.assign(acts.steps(), 0.0);
    cal.aggregation[midpoint_index(acts.steps())] = 1.0;
  }
  cal.temporal = temporal_salience(cal.per_t, cal.aggregation);
  cal.pair = build_balancing(cal.temporal, cal.weight, opts.eps);

  cal.so_pre = std::max(overall_salience(cal.temporal), overall_salience(cal.weight));
  double post = 0.0;
  for (std::size_t j = 0; j < cal.pair.size(); ++j) {
    post = std::max({post, cal.temporal[j] * cal.pair.bx[j], cal.weight[j] * cal.pair.bw[j]});
  }
  cal.so_post = post;
  return cal;
}

}  // namespace sq
