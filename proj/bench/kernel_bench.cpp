// Copyright 2026 The pstn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Serial reference vs OpenMP kernels on model-sized and larger shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "pstn/kernels.hpp"
#include "pstn/rng.hpp"

namespace k = pstn::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  pstn::RngStream rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::omp::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    else k::serial::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_GemmTN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 3), b = random_vec(n * n, 4);
  std::vector<double> c(n * n, 0.0);
  for (auto _ : state) {
    if constexpr (Parallel) k::omp::gemm_tn(n, n, n, a.data(), b.data(), c.data());
    else k::serial::gemm_tn(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0)), t = 16, heads = 4, dh = 16;
  std::vector<std::size_t> lengths(batch, t);
  k::AttentionShape s{batch, t, heads, dh, lengths};
  const std::size_t rows = batch * t, w = heads * dh;
  const auto q = random_vec(rows * w, 5), kk = random_vec(rows * w, 6), v = random_vec(rows * w, 7);
  std::vector<double> probs(batch * heads * t * t), out(rows * w);
  for (auto _ : state) {
    if constexpr (Parallel) k::omp::attention_forward(s, q.data(), kk.data(), v.data(), probs.data(), out.data());
    else k::serial::attention_forward(s, q.data(), kk.data(), v.data(), probs.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmNN<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNN<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmTN<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmTN<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<false>)->Arg(64);
BENCHMARK(BM_Attention<true>)->Arg(64);

BENCHMARK_MAIN();
