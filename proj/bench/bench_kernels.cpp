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

#include <benchmark/benchmark.h>

#include <random>

#include "sq/kernels.hpp"
#include "sq/quant.hpp"

namespace {

sq::MatrixF random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  sq::MatrixF m(r, c);
  for (auto& v : m.data()) v = n(rng);
  return m;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    auto c = Parallel ? sq::kernels::matmul(a, b) : sq::reference::matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_ColumnAbsMax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * 4, n, 3);
  for (auto _ : state) {
    auto s = Parallel ? sq::kernels::column_abs_max(a) : sq::reference::column_abs_max(a);
    benchmark::DoNotOptimize(s.data());
  }
}

template <bool Parallel>
void BM_QuantizeCodes(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 4);
  const auto p = sq::fit_minmax(a, 4, sq::Granularity::PerOutputChannel);
  std::vector<std::int32_t> codes(a.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      sq::kernels::quantize_codes<float>(a.data(), n, true, p.delta, p.zero_point, p.qmax(), codes);
    } else {
      sq::reference::quantize_codes<float>(a.data(), n, true, p.delta, p.zero_point, p.qmax(), codes);
    }
    benchmark::DoNotOptimize(codes.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_ColumnAbsMax<false>)->Arg(256)->Arg(1024);
BENCHMARK(BM_ColumnAbsMax<true>)->Arg(256)->Arg(1024);
BENCHMARK(BM_QuantizeCodes<false>)->Arg(256)->Arg(1024);
BENCHMARK(BM_QuantizeCodes<true>)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
