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

// Small hand-rolled generators for property tests. Each property draws its
// cases from a fixed seed so failures reproduce exactly.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sq/matrix.hpp"
#include "sq/salience.hpp"

namespace gen {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(eng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

  template <typename T>
  sq::Matrix<T> matrix(std::size_t r, std::size_t c, double sd = 1.0) {
    sq::Matrix<T> m(r, c);
    for (auto& v : m.data()) v = static_cast<T>(normal(0.0, sd));
    return m;
  }

  /// Gaussian matrix with a few columns amplified, like an outlier-heavy activation.
  template <typename T>
  sq::Matrix<T> salient_columns(std::size_t r, std::size_t c, std::size_t k, double scale) {
    auto m = matrix<T>(r, c);
    for (std::size_t n = 0; n < k; ++n) {
      const std::size_t j = index(c);
      for (std::size_t i = 0; i < r; ++i) m(i, j) = static_cast<T>(m(i, j) * scale);
    }
    return m;
  }

  std::vector<double> vec(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

  /// Integer-valued vector so ties are frequent.
  std::vector<double> tied(std::size_t n, int levels) {
    std::vector<double> v(n);
    for (auto& x : v) x = integer(0, levels - 1);
    return v;
  }

  sq::BalancingPair pair(std::size_t n, double lo = 0.1, double hi = 10.0) {
    sq::BalancingPair p;
    for (std::size_t j = 0; j < n; ++j) {
      const double b = log_uniform(lo, hi);
      p.bx.push_back(b);
      p.bw.push_back(1.0 / b);
    }
    return p;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

template <typename T>
double rel_err(const sq::Matrix<T>& a, const sq::Matrix<T>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    num += d * d;
    den += static_cast<double>(b.data()[i]) * static_cast<double>(b.data()[i]);
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace gen
