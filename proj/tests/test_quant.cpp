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
#include <limits>

#include "gen.hpp"
#include "sq/error.hpp"
#include "sq/quant.hpp"

using sq::Granularity;
using sq::MatrixD;
using sq::MatrixF;

namespace {

MatrixD row(std::vector<double> v) {
  const std::size_t n = v.size();
  return MatrixD(1, n, std::move(v));
}

std::vector<std::int32_t> codes_of(const MatrixD& x, const sq::QuantParams& p) { return sq::quantize(x, p).codes; }

// Nearest in-range code by enumeration; ties resolve to the even code.
std::int32_t nearest_code(double x, double delta, std::int32_t zp, std::int32_t qmax) {
  std::int32_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::int32_t q = 0; q <= qmax; ++q) {
    const double err = std::abs(x - delta * (q - zp));
    if (err < best_err || (err == best_err && (q - zp) % 2 == 0)) {
      best = q;
      best_err = err;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("quantize rounds to nearest and clamps") {
  const auto p = sq::per_tensor_params(8, 1.0, 0);
  CHECK(codes_of(row({0.0}), p) == std::vector<std::int32_t>{0});
  CHECK(codes_of(row({2.4, 2.6}), p) == std::vector<std::int32_t>{2, 3});
  CHECK(codes_of(row({300.0}), p) == std::vector<std::int32_t>{255});
  CHECK(codes_of(row({0.5, 1.5, 2.5}), p) == std::vector<std::int32_t>{0, 2, 2});
}

TEST_CASE("quantize rejects bad input") {
  const auto p = sq::per_tensor_params(8, 1.0, 0);
  CHECK_THROWS_AS(sq::quantize(row({std::nan("")}), p), sq::Error);
  CHECK_THROWS_AS(sq::quantize(row({INFINITY}), p), sq::Error);
  auto bad = p;
  bad.delta = {0.0};
  CHECK_THROWS_AS(sq::quantize(row({1.0}), bad), sq::Error);
  bad.delta = {-1.0};
  CHECK_THROWS_AS(sq::quantize(row({1.0}), bad), sq::Error);
  try {
    sq::quantize(row({std::nan("")}), p);
  } catch (const sq::Error& e) {
    CHECK(e.code() == sq::Errc::NonFiniteInput);
  }
}

TEST_CASE("dequantize examples") {
  sq::QuantizedTensor q{1, 1, {0}, sq::per_tensor_params(8, 1.0, 0)};
  CHECK(sq::dequantize<double>(q)(0, 0) == 0.0);
  q.codes = {255};
  q.params = sq::per_tensor_params(8, 0.5, 0);
  CHECK(sq::dequantize<double>(q)(0, 0) == 127.5);
  q.codes = {5};
  q.params = sq::per_tensor_params(8, 2.0, 3);
  CHECK(sq::dequantize<double>(q)(0, 0) == 4.0);
}

TEST_CASE("fake_quantize examples") {
  CHECK(sq::fake_quantize(row({2.4}), sq::per_tensor_params(8, 1.0, 0))(0, 0) == 2.0);
  CHECK(sq::fake_quantize(row({-10.0}), sq::per_tensor_params(4, 1.0, 0))(0, 0) == 0.0);
  const auto p = sq::per_tensor_params(4, 0.25, 3);
  for (int k = 0; k <= 15; ++k) {
    const double x = 0.25 * (k - 3);
    CHECK(sq::fake_quantize(row({x}), p)(0, 0) == x);
  }
}

TEST_CASE("fit_minmax examples") {
  std::vector<double> ramp(256);
  for (int i = 0; i < 256; ++i) ramp[i] = i;
  auto p = sq::fit_minmax(row(ramp), 8, Granularity::PerTensor);
  CHECK(p.delta[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p.zero_point[0] == 0);

  p = sq::fit_minmax(row({-1.0, 0.3, 1.0}), 2, Granularity::PerTensor);
  CHECK(p.delta[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p.zero_point[0] == 2);
  // Both endpoints reconstruct within half a step.
  const auto fq = sq::fake_quantize(row({-1.0, 1.0}), p);
  CHECK(std::abs(fq(0, 0) + 1.0) <= p.delta[0] / 2 + 1e-12);
  CHECK(std::abs(fq(0, 1) - 1.0) <= p.delta[0] / 2 + 1e-12);

  for (const double c : {0.0, 3.7, -2.2, 1e-9}) {
    p = sq::fit_minmax(row({c, c, c}), 8, Granularity::PerTensor);
    CHECK(p.delta[0] == sq::kMinDelta);
    const double got = sq::fake_quantize(row({c}), p)(0, 0);
    // Nearest representable grid value to c.
    const double lo = sq::kMinDelta * (0 - p.zero_point[0]);
    const double hi = sq::kMinDelta * (p.qmax() - p.zero_point[0]);
    CHECK(got == doctest::Approx(std::clamp(c, lo, hi)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(sq::fit_minmax(row({1.0, std::nan("")}), 8, Granularity::PerTensor), sq::Error);
}

TEST_CASE("fit_minmax per output channel fits each column") {
  const MatrixD x{{0.0, -4.0}, {1.0, 4.0}};
  const auto p = sq::fit_minmax(x, 8, Granularity::PerOutputChannel);
  REQUIRE(p.groups() == 2);
  CHECK(p.delta[0] == doctest::Approx(1.0 / 255));
  CHECK(p.delta[1] == doctest::Approx(8.0 / 255));
}

TEST_CASE("fit_mse_search examples") {
  gen::Rng rng(11);
  const auto x = rng.matrix<double>(50, 6);
  const double one[] = {1.0};
  CHECK(sq::fit_mse_search(x, 4, Granularity::PerOutputChannel, one) ==
        sq::fit_minmax(x, 4, Granularity::PerOutputChannel));

  std::vector<double> grid;
  for (int k = 0; k < 20; ++k) grid.push_back(1.0 - 0.05 * k);
  auto brute = [&](const MatrixD& x) {
    double lo = INFINITY, hi = -INFINITY;
    for (const double v : x.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    double best = INFINITY;
    sq::QuantParams best_p;
    for (const double s : grid) {
      sq::QuantParams p = sq::per_tensor_params(4, 1.0, 0);
      sq::fit_range(lo * s, hi * s, 4, p.delta[0], p.zero_point[0]);
      const double e = sq::quant_error_mse(x, p);
      if (e < best) {
        best = e;
        best_p = p;
      }
    }
    return best_p;
  };

  // One far outlier among 999 small values: clipping it costs more squared
  // error than the finer grid saves, so the full range is kept.
  std::vector<double> v;
  for (int i = 0; i < 999; ++i) v.push_back(rng.uniform(-1.0, 1.0));
  v.push_back(100.0);
  const MatrixD outlier(1000, 1, v);
  const auto kept = sq::fit_mse_search(outlier, 4, Granularity::PerTensor, grid);
  CHECK(kept == brute(outlier));
  CHECK(kept == sq::fit_minmax(outlier, 4, Granularity::PerTensor));

  // Gaussian tails are where clipping pays at 4 bits.
  const auto gauss = rng.matrix<double>(4000, 1);
  const auto clipped = sq::fit_mse_search(gauss, 4, Granularity::PerTensor, grid);
  CHECK(clipped == brute(gauss));
  CHECK(clipped.delta[0] < sq::fit_minmax(gauss, 4, Granularity::PerTensor).delta[0]);

  const MatrixD flat(4, 1, 2.5);
  CHECK(sq::fit_mse_search(flat, 4, Granularity::PerTensor, grid) == sq::fit_minmax(flat, 4, Granularity::PerTensor));
}

TEST_CASE("quant_error_mse examples") {
  const auto p = sq::per_tensor_params(8, 1.0, 0);
  CHECK(sq::quant_error_mse(row({0.0, 1.0, 17.0}), p) == 0.0);
  CHECK(sq::quant_error_mse(row({0.5}), p) == 0.25);
}

TEST_CASE("expand_per_channel and validation") {
  const auto p = sq::per_tensor_params(8, 0.1, 7);
  const auto e = sq::expand_per_channel(p, 3);
  CHECK(e.granularity == Granularity::PerOutputChannel);
  CHECK(e.delta == std::vector<double>(3, 0.1));
  CHECK(e.zero_point == std::vector<std::int32_t>(3, 7));
  auto bad = e;
  bad.zero_point[1] = 256;
  CHECK_THROWS_AS(bad.validate(), sq::Error);
  CHECK_THROWS_AS(e.validate_for(4), sq::Error);
  CHECK_THROWS_AS(sq::fit_minmax(row({1.0}), 1, Granularity::PerTensor), sq::Error);
}

TEST_CASE("property: b=2 quantize matches exhaustive nearest-code search") {
  gen::Rng rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    MatrixD x(8, 1);
    for (auto& v : x.data()) v = rng.normal(0.0, rng.log_uniform(0.01, 10.0));
    const auto g = rng.coin() ? Granularity::PerTensor : Granularity::PerOutputChannel;
    const auto p = sq::fit_minmax(x, 2, g);
    const auto q = sq::quantize(x, p);
    for (std::size_t i = 0; i < x.size(); ++i) {
      REQUIRE(q.codes[i] == nearest_code(x.data()[i], p.delta[0], p.zero_point[0], 3));
    }
  }
}

TEST_CASE("property: range safety, grid bound, idempotence, monotonicity") {
  gen::Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const int bits = std::array{2, 3, 4, 8}[rng.index(4)];
    const std::size_t rows = 1 + rng.index(20), cols = 1 + rng.index(6);
    MatrixD x(rows, cols);
    const double mag = rng.log_uniform(1e-6, 1e6);
    for (auto& v : x.data()) v = rng.normal(0.0, mag);
    const auto g = rng.coin() ? Granularity::PerTensor : Granularity::PerOutputChannel;
    const auto p = sq::fit_minmax(x, bits, g);

    // Extreme probes must still clamp into range.
    MatrixD probe = x;
    probe(0, 0) = 1e300;
    probe(rows - 1, cols - 1) = -1e300;
    for (const auto c : sq::quantize(probe, p).codes) REQUIRE((c >= 0 && c <= p.qmax()));

    const auto fq = sq::fake_quantize(x, p);
    CHECK(sq::fake_quantize(fq, p) == fq);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t gi = g == Granularity::PerTensor ? 0 : j;
        const double d = p.delta[gi];
        const double lo = d * (0 - p.zero_point[gi]), hi = d * (p.qmax() - p.zero_point[gi]);
        if (x(i, j) >= lo && x(i, j) <= hi) {
          REQUIRE(std::abs(x(i, j) - fq(i, j)) <= d / 2 * (1 + 1e-12) + 4 * std::abs(x(i, j)) * 2.3e-16);
        }
      }
    }

    MatrixD sorted(64, 1);
    for (auto& v : sorted.data()) v = rng.normal(0.0, mag * 2);
    std::sort(sorted.data().begin(), sorted.data().end());
    const auto pp = sq::per_tensor_params(bits, p.delta[0], p.zero_point[0]);
    const auto codes = sq::quantize(sorted, pp).codes;
    CHECK(std::is_sorted(codes.begin(), codes.end()));
  }
}

TEST_CASE("property: round-trip MSE within the per-channel grid bound") {
  gen::Rng rng(4);
  for (const int bits : {2, 4, 8}) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto x = rng.matrix<float>(16, 8, rng.log_uniform(0.01, 100.0));
      const auto p = sq::fit_minmax(x, bits, Granularity::PerOutputChannel);
      const auto fq = sq::fake_quantize(x, p);
      for (std::size_t j = 0; j < x.cols(); ++j) {
        double mse = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) mse += std::pow(double(x(i, j)) - fq(i, j), 2);
        mse /= double(x.rows());
        CHECK(mse <= std::pow(p.delta[j] / 2, 2) * (1 + 1e-5));
      }
    }
  }
}
