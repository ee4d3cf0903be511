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

#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "gen.hpp"
#include "sq/dit_sim.hpp"
#include "sq/error.hpp"
#include "sq/seed.hpp"

using sq::MatrixF;

namespace {

// Step-by-step reference forward in double with plain loops, sharing no code
// with the simulator.
std::vector<std::vector<double>> reference_forward(const sq::DiTBlockParams& p, const MatrixF& z,
                                                   const std::vector<float>& c) {
  const std::size_t n = z.rows(), d = p.d_in, h = p.heads, dh = d / h, hidden = p.mlp_ratio * d;
  using Rows = std::vector<std::vector<double>>;
  auto ada = [&](const Rows& x, const sq::AdaLNParams<float>& a) {
    std::vector<double> g(d), b(d);
    for (std::size_t j = 0; j < d; ++j) {
      float gj = a.b_gamma[j], bj = a.b_beta[j];
      for (std::size_t k = 0; k < c.size(); ++k) {
        gj += c[k] * a.w_gamma(k, j);
        bj += c[k] * a.w_beta(k, j);
      }
      g[j] = gj;
      b[j] = bj;
    }
    Rows out(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
      const double mean = std::accumulate(x[i].begin(), x[i].end(), 0.0) / d;
      double var = 0;
      for (const double v : x[i]) var += (v - mean) * (v - mean);
      var /= d;
      for (std::size_t j = 0; j < d; ++j) out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-6) * (1 + g[j]) + b[j];
    }
    return out;
  };
  auto lin = [&](const Rows& x, const MatrixF& w, const std::vector<float>& b) {
    Rows out(x.size(), std::vector<double>(w.cols()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t o = 0; o < w.cols(); ++o) {
        double s = b[o];
        for (std::size_t k = 0; k < w.rows(); ++k) s += x[i][k] * w(k, o);
        out[i][o] = s;
      }
    }
    return out;
  };
  Rows zr(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) zr[i][j] = z(i, j);
  }
  const Rows qkv = lin(ada(zr, p.adaln1), p.w_qkv, p.b_qkv);
  Rows att(n, std::vector<double>(d));
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> w(n);
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t e = 0; e < dh; ++e) s += qkv[i][hh * dh + e] * qkv[j][d + hh * dh + e];
        w[j] = std::exp(s / std::sqrt(double(dh)));
      }
      const double tot = std::accumulate(w.begin(), w.end(), 0.0);
      for (std::size_t e = 0; e < dh; ++e) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += w[j] / tot * qkv[j][2 * d + hh * dh + e];
        att[i][hh * dh + e] = s;
      }
    }
  }
  Rows r1 = lin(att, p.w_proj, p.b_proj);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) r1[i][j] += zr[i][j];
  }
  Rows f = lin(ada(r1, p.adaln2), p.w_fc1, p.b_fc1);
  for (auto& row : f) {
    for (double& v : row) v = 0.5 * v * (1 + std::erf(v / std::sqrt(2.0)));
  }
  (void)hidden;
  Rows out = lin(f, p.w_fc2, p.b_fc2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i][j] += r1[i][j];
  }
  return out;
}

sq::SalienceProfile no_profile() { return {}; }

}  // namespace

TEST_CASE("forward_block matches the hand-coded reference") {
  gen::Rng rng(30);
  for (const auto [d, h, n] : {std::array<std::size_t, 3>{4, 1, 2}, {8, 2, 5}, {16, 4, 3}}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto p = sq::init_block(d, h, 2, 100 + trial, no_profile());
      const auto z = rng.matrix<float>(n, d);
      std::vector<float> c(d);
      for (auto& v : c) v = float(rng.normal(0, 0.5));
      const auto got = sq::forward_block(p, z, c).out;
      const auto want = reference_forward(p, z, c);
      double num = 0, den = 0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          num += std::pow(got(i, j) - want[i][j], 2);
          den += want[i][j] * want[i][j];
        }
      }
      REQUIRE(std::sqrt(num / den) <= 1e-6);
    }
  }
}

TEST_CASE("residual identity when the adaLN scale vanishes") {
  auto p = sq::init_block(8, 2, 4, 1, no_profile());
  for (auto* a : {&p.adaln1, &p.adaln2}) {
    a->w_gamma = MatrixF(8, 8);
    a->w_beta = MatrixF(8, 8);
    a->b_gamma.assign(8, -1.0f);
    a->b_beta.assign(8, 0.0f);
  }
  for (auto* b : {&p.b_qkv, &p.b_proj, &p.b_fc1, &p.b_fc2}) std::fill(b->begin(), b->end(), 0.0f);
  gen::Rng rng(31);
  const auto z = rng.matrix<float>(5, 8);
  const std::vector<float> c(8, 0.7f);
  CHECK(sq::forward_block(p, z, c).out == z);
}

TEST_CASE("property: token permutation equivariance") {
  gen::Rng rng(32);
  const auto p = sq::init_block(16, 4, 4, 2, no_profile());
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = rng.matrix<float>(6, 16);
    std::vector<float> c(16);
    for (auto& v : c) v = float(rng.normal());
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    MatrixF zp(6, 16);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 16; ++j) zp(i, j) = z(perm[i], j);
    }
    const auto a = sq::forward_block(p, z, c).out, b = sq::forward_block(p, zp, c).out;
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 16; ++j) REQUIRE(b(i, j) == doctest::Approx(a(perm[i], j)).epsilon(1e-5));
    }
  }
}

TEST_CASE("init_block determinism and shape checks") {
  const sq::SalienceProfile prof{{1, 5}, {10.0, 20.0}, {}};
  CHECK(sq::init_block(16, 4, 4, 7, prof) == sq::init_block(16, 4, 4, 7, prof));
  CHECK_FALSE(sq::init_block(16, 4, 4, 7, prof) == sq::init_block(16, 4, 4, 8, prof));
  CHECK_THROWS_AS(sq::init_block(10, 4, 4, 1, prof), sq::Error);
  CHECK_THROWS_AS(sq::init_block(16, 4, 4, 1, sq::SalienceProfile{{16}, {2.0}, {}}), sq::Error);
  CHECK_THROWS_AS(sq::init_block(16, 4, 4, 1, sq::SalienceProfile{{1}, {-2.0}, {}}), sq::Error);
}

TEST_CASE("init_block weight scale without and with a salient row") {
  // Over 100 seeds no row of a balanced layer strays beyond 6 base standard
  // deviations (the largest of ~10^6 Gaussian draws sits near 5).
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = sq::init_block(32, 4, 4, seed, no_profile());
    for (const auto r : sq::kBalancedRoles) {
      const double sigma = 1.0 / std::sqrt(double(p.weight(r).rows()));
      const auto s = sq::weight_salience(p.weight(r));
      for (const double v : s.values()) worst = std::max(worst, v / sigma);
    }
  }
  CHECK(worst < 6.0);

  const auto p = sq::init_block(64, 4, 4, 3, sq::SalienceProfile{{9}, {50.0}, {}});
  for (const auto r : sq::kBalancedRoles) {
    const auto s = sq::weight_salience(p.weight(r));
    std::vector<double> v(s.values().begin(), s.values().end());
    std::nth_element(v.begin(), v.begin() + 32, v.end());
    CHECK(s[9] >= 10.0 * v[32]);
  }
}

TEST_CASE("drift schedules and timestep selection") {
  CHECK(sq::select_timesteps(100, 10) == std::vector<int>{0, 10, 20, 30, 40, 50, 60, 70, 80, 90});
  CHECK(sq::select_timesteps(100, 1) == std::vector<int>{0});
  CHECK_THROWS_AS(sq::select_timesteps(5, 10), sq::Error);
  const std::vector<int> ts{0, 50, 99};
  CHECK(sq::drift_schedule(sq::DriftKind::Flat, 4.0, ts, 100) == std::vector<double>{1, 1, 1});
  const auto lin = sq::drift_schedule(sq::DriftKind::Linear, 4.0, ts, 100);
  CHECK(lin.front() == 1.0);
  CHECK(lin.back() == 4.0);
  const auto v = sq::drift_schedule(sq::DriftKind::VShape, 4.0, ts, 100);
  CHECK(v[0] == 4.0);
  CHECK(v[1] < 1.1);
  const auto pk = sq::drift_schedule(sq::DriftKind::Peak, 4.0, ts, 100);
  CHECK(pk[0] == 1.0);
  CHECK(pk[1] > 3.9);
  CHECK_THROWS_AS(sq::drift_schedule(sq::DriftKind::Linear, 0.5, ts, 100), sq::Error);
  for (const char* k : {"flat", "linear", "vshape", "peak"}) {
    CHECK(std::string(sq::drift_kind_name(sq::drift_kind_from_name(k))) == k);
  }
}

TEST_CASE("gen_calibration is deterministic and shaped per layer") {
  const auto p = sq::init_block(16, 4, 4, 5, no_profile());
  const std::vector<int> ts{0, 50};
  const sq::SalienceProfile prof{{2}, {4.0}, {1.0, 2.0}};
  const auto a = sq::gen_calibration(p, ts, 3, 5, prof, 9);
  const auto b = sq::gen_calibration(p, ts, 3, 5, prof, 9);
  for (const char* name : {"proj1", "proj2", "fc1", "fc2", "v"}) {
    REQUIRE(a.layers.count(name) == 1);
    CHECK(a.layers.at(name).per_t == b.layers.at(name).per_t);
    CHECK(a.layers.at(name).steps() == 2);
    CHECK(a.layers.at(name).per_t[0].size() == 3);
  }
  CHECK(a.layers.at("fc2").channels() == 64);
  CHECK_THROWS_AS(sq::gen_calibration(p, ts, 3, 5, sq::SalienceProfile{{2}, {4.0}, {1.0}}, 9), sq::Error);
  CHECK_THROWS_AS(sq::gen_calibration(p, ts, 3, 5, sq::SalienceProfile{{2}, {4.0}, {1.0, -1.0}}, 9), sq::Error);
}

TEST_CASE("gen_calibration realizes the drift at designated channels") {
  const auto p = sq::init_block(64, 4, 4, 11, no_profile());
  const std::vector<int> ts{0, 50};
  const auto cal = sq::gen_calibration(p, ts, 8, 16, sq::SalienceProfile{{3, 40}, {8.0, 8.0}, {1.0, 2.0}}, 12);
  const auto& acts = cal.layers.at("proj1");
  const auto s0 = sq::activation_salience<float>(acts.per_t[0]);
  const auto s1 = sq::activation_salience<float>(acts.per_t[1]);
  for (const std::size_t j : {3, 40}) {
    CHECK(s1[j] / s0[j] == doctest::Approx(2.0).epsilon(0.3));
  }

  const std::vector<int> many = sq::select_timesteps(100, 10);
  const auto flat = sq::gen_calibration(p, many, 8, 16, sq::SalienceProfile{{3, 40}, {8.0, 8.0}, {}}, 13);
  const auto rep = sq::challenge_report(flat.layers.at("proj1"), p.w_qkv, 4);
  CHECK(rep.temporal_cv[3] < 0.3);
  CHECK(rep.temporal_cv[40] < 0.3);
}

TEST_CASE("challenge_report") {
  sq::TimestepActivations zeros;
  zeros.per_t = {{MatrixF(4, 6)}, {MatrixF(4, 6)}};
  zeros.timesteps = {0, 1};
  const auto z = sq::challenge_report(zeros, MatrixF(6, 3), 4);
  CHECK(z.act_rank_corr == 0.0);
  CHECK(z.weight_rank_corr == 0.0);
  CHECK(z.timestep_quantiles.size() == 2);

  // Channel scales grow with the index; one channel also triples over time.
  gen::Rng rng(33);
  sq::TimestepActivations acts;
  for (int t = 0; t < 3; ++t) {
    MatrixF x = rng.matrix<float>(64, 32);
    for (std::size_t i = 0; i < 64; ++i) {
      for (std::size_t j = 0; j < 32; ++j) x(i, j) *= 0.2f * float(1 + j);
      x(i, 5) = (i == 0 ? 40.0f : 0.5f) * float(1 + t);
    }
    acts.per_t.push_back({x});
    acts.timesteps.push_back(t);
  }
  const auto rep = sq::challenge_report(acts, rng.matrix<float>(32, 8), 4);
  CHECK(rep.act_rank_corr > 0.5);
  CHECK(rep.temporal_ratio[5] == doctest::Approx(3.0).epsilon(0.3));
  for (const auto& q : rep.timestep_quantiles) CHECK(std::is_sorted(q.begin(), q.end()));
}

TEST_CASE("seed derivation") {
  CHECK(sq::derive_seed(1, 0) != sq::derive_seed(1, 1));
  CHECK(sq::derive_seed(1, 0) != sq::derive_seed(2, 0));
  CHECK(sq::derive_seed(42, 3) == sq::derive_seed(42, 3));
  CHECK(sq::purpose_seed(7, sq::SeedPurpose::ModelInit) != sq::purpose_seed(7, sq::SeedPurpose::Calibration));
}
