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

#include <gtest/gtest.h>
#include <omp.h>

#include <vector>

#include "pstn/kernels.hpp"
#include "pstn/rng.hpp"

using namespace pstn;
namespace k = pstn::kernels;

namespace {

std::vector<double> rnd(std::size_t n, std::uint64_t seed) {
  RngStream r(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = r.normal();
  return v;
}

// Naive triple loops with long-double accumulation.
double ref_nn(const std::vector<double>& a, const std::vector<double>& b, std::size_t i, std::size_t j,
              std::size_t kk, std::size_t n) {
  long double s = 0;
  for (std::size_t p = 0; p < kk; ++p) s += (long double)a[i * kk + p] * b[p * n + j];
  return (double)s;
}

class ThreadCounts : public ::testing::TestWithParam<int> {};

}  // namespace

TEST(Kernels, GemmMatchesNaiveOracle) {
  const std::size_t m = 7, kk = 5, n = 9;
  const auto a = rnd(m * kk, 1), b = rnd(kk * n, 2);
  std::vector<double> c(m * n);
  k::serial::gemm_nn(m, kk, n, a.data(), b.data(), c.data(), false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(c[i * n + j], ref_nn(a, b, i, j, kk, n), 1e-12);

  // A^T B with A [m,k], B [m,n] -> [k,n].
  const auto bt = rnd(m * n, 3);
  std::vector<double> ctn(kk * n, 0.0);
  k::serial::gemm_tn(m, kk, n, a.data(), bt.data(), ctn.data());
  for (std::size_t p = 0; p < kk; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += (long double)a[i * kk + p] * bt[i * n + j];
      EXPECT_NEAR(ctn[p * n + j], (double)s, 1e-12);
    }

  // A B^T with A [m,n], B [k,n] -> [m,k].
  const auto an = rnd(m * n, 4), bn = rnd(kk * n, 5);
  std::vector<double> cnt(m * kk, 0.0);
  k::serial::gemm_nt(m, kk, n, an.data(), bn.data(), cnt.data());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < kk; ++p) {
      long double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += (long double)an[i * n + j] * bn[p * n + j];
      EXPECT_NEAR(cnt[i * kk + p], (double)s, 1e-12);
    }
}

TEST(Kernels, AttentionRowsAreConvexCombinationsAndMaskPadding) {
  const std::size_t batch = 2, t = 4, heads = 2, dh = 3;
  std::vector<std::size_t> lengths{4, 2};
  k::AttentionShape s{batch, t, heads, dh, lengths};
  const std::size_t rows = batch * t, w = heads * dh;
  const auto q = rnd(rows * w, 6), kk = rnd(rows * w, 7), v = rnd(rows * w, 8);
  std::vector<double> probs(batch * heads * t * t), out(rows * w);
  k::serial::attention_forward(s, q.data(), kk.data(), v.data(), probs.data(), out.data());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < t; ++j) {
          const double p = probs[((b * heads + h) * t + i) * t + j];
          if (j >= lengths[b]) {
            EXPECT_EQ(p, 0.0);
          }
          total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
}

TEST_P(ThreadCounts, OmpBitIdenticalToSerial) {
  omp_set_num_threads(GetParam());
  const std::size_t m = 67, kk = 33, n = 45;
  const auto a = rnd(m * kk, 9), b = rnd(kk * n, 10), bm = rnd(m * n, 11), bk = rnd(kk * n, 12);
  std::vector<double> c1(m * n), c2(m * n);
  k::serial::gemm_nn(m, kk, n, a.data(), b.data(), c1.data(), false);
  k::omp::gemm_nn(m, kk, n, a.data(), b.data(), c2.data(), false);
  EXPECT_EQ(c1, c2);
  std::vector<double> t1(kk * n, 0.5), t2(kk * n, 0.5);
  k::serial::gemm_tn(m, kk, n, a.data(), bm.data(), t1.data());
  k::omp::gemm_tn(m, kk, n, a.data(), bm.data(), t2.data());
  EXPECT_EQ(t1, t2);
  const auto an = rnd(m * n, 13);
  std::vector<double> n1(m * kk, 0.25), n2(m * kk, 0.25);
  k::serial::gemm_nt(m, kk, n, an.data(), bk.data(), n1.data());
  k::omp::gemm_nt(m, kk, n, an.data(), bk.data(), n2.data());
  EXPECT_EQ(n1, n2);

  const std::size_t batch = 5, t = 7, heads = 3, dh = 4;
  std::vector<std::size_t> lengths{7, 3, 5, 1, 6};
  k::AttentionShape s{batch, t, heads, dh, lengths};
  const std::size_t rows = batch * t, w = heads * dh;
  const auto q = rnd(rows * w, 14), kv = rnd(rows * w, 15), v = rnd(rows * w, 16), g = rnd(rows * w, 17);
  std::vector<double> p1(batch * heads * t * t), p2(p1.size()), o1(rows * w), o2(rows * w);
  k::serial::attention_forward(s, q.data(), kv.data(), v.data(), p1.data(), o1.data());
  k::omp::attention_forward(s, q.data(), kv.data(), v.data(), p2.data(), o2.data());
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(o1, o2);
  std::vector<double> dq1(rows * w, 0), dk1(rows * w, 0), dv1(rows * w, 0);
  std::vector<double> dq2(rows * w, 0), dk2(rows * w, 0), dv2(rows * w, 0);
  k::serial::attention_backward(s, q.data(), kv.data(), v.data(), p1.data(), g.data(), dq1.data(), dk1.data(),
                                dv1.data());
  k::omp::attention_backward(s, q.data(), kv.data(), v.data(), p1.data(), g.data(), dq2.data(), dk2.data(),
                             dv2.data());
  EXPECT_EQ(dq1, dq2);
  EXPECT_EQ(dk1, dk2);
  EXPECT_EQ(dv1, dv2);
}

INSTANTIATE_TEST_SUITE_P(Threads, ThreadCounts, ::testing::Values(1, 2, 3, 8));

TEST(Kernels, BackendSwitchDispatches) {
  k::set_backend(k::Backend::serial);
  EXPECT_EQ(k::backend(), k::Backend::serial);
  k::set_backend(k::Backend::parallel);
  EXPECT_EQ(k::backend(), k::Backend::parallel);
}
