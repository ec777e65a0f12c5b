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

#include "pstn/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

namespace pstn::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::parallel};

// Row bodies shared by both backends. Each computes the output rows owned by
// one outer-loop index, in a fixed inner order.

inline void gemm_nn_row(std::size_t i, std::size_t k, std::size_t n,
                        const double* a, const double* b, double* c,
                        bool accumulate) {
  double* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = arow[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
  }
}

// Output rows [p0, p1) of A^T B. Rows of B are visited in chunks so a chunk
// stays cached across the output rows; every element still sums over i in
// ascending order.
inline void gemm_tn_rows(std::size_t p0, std::size_t p1, std::size_t m,
                         std::size_t k, std::size_t n, const double* a,
                         const double* b, double* c) {
  constexpr std::size_t kChunk = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kChunk) {
    const std::size_t i1 = std::min(m, i0 + kChunk);
    for (std::size_t p = p0; p < p1; ++p) {
      double* crow = c + p * n;
      for (std::size_t i = i0; i < i1; ++i) {
        const double aip = a[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = b + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

inline constexpr std::size_t kTnRowBlock = 8;

// Four interleaved partial sums; the order is fixed so results do not depend
// on the backend.
inline double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += x[j] * y[j];
    s1 += x[j + 1] * y[j + 1];
    s2 += x[j + 2] * y[j + 2];
    s3 += x[j + 3] * y[j + 3];
  }
  for (; j < n; ++j) s0 += x[j] * y[j];
  return (s0 + s1) + (s2 + s3);
}

inline void gemm_nt_row(std::size_t i, std::size_t k, std::size_t n,
                        const double* a, const double* b, double* c) {
  const double* arow = a + i * n;
  double* crow = c + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    crow[p] += dot(arow, brow, n);
  }
}

// One (sequence, head) pair.
void attention_forward_block(const AttentionShape& s, std::size_t bh,
                             const double* q, const double* k, const double* v,
                             double* probs, double* out) {
  const std::size_t b = bh / s.heads;
  const std::size_t h = bh % s.heads;
  const std::size_t T = s.seq_len;
  const std::size_t dh = s.head_dim;
  const std::size_t w = s.width();
  const std::size_t len = s.lengths[b];
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  double* p = probs + bh * T * T;
  const std::size_t row0 = b * T;
  for (std::size_t t = 0; t < T; ++t) {
    const double* qt = q + (row0 + t) * w + h * dh;
    double* pt = p + t * T;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t u = 0; u < T; ++u) {
      if (u >= len) {
        pt[u] = 0.0;
        continue;
      }
      const double* ku = k + (row0 + u) * w + h * dh;
      pt[u] = dot(qt, ku, dh) * scale;
      mx = std::max(mx, pt[u]);
    }
    double z = 0.0;
    for (std::size_t u = 0; u < len; ++u) {
      pt[u] = std::exp(pt[u] - mx);
      z += pt[u];
    }
    for (std::size_t u = 0; u < len; ++u) pt[u] /= z;
    double* ot = out + (row0 + t) * w + h * dh;
    std::fill(ot, ot + dh, 0.0);
    for (std::size_t u = 0; u < len; ++u) {
      const double pu = pt[u];
      const double* vu = v + (row0 + u) * w + h * dh;
      for (std::size_t c = 0; c < dh; ++c) ot[c] += pu * vu[c];
    }
  }
}

void attention_backward_block(const AttentionShape& s, std::size_t bh,
                              const double* q, const double* k,
                              const double* v, const double* probs,
                              const double* dout, double* dq, double* dk,
                              double* dv) {
  const std::size_t b = bh / s.heads;
  const std::size_t h = bh % s.heads;
  const std::size_t T = s.seq_len;
  const std::size_t dh = s.head_dim;
  const std::size_t w = s.width();
  const std::size_t len = s.lengths[b];
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* p = probs + bh * T * T;
  const std::size_t row0 = b * T;
  std::vector<double> dp(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* pt = p + t * T;
    const double* go = dout + (row0 + t) * w + h * dh;
    double weighted = 0.0;
    for (std::size_t u = 0; u < len; ++u) {
      const double* vu = v + (row0 + u) * w + h * dh;
      double* dvu = dv + (row0 + u) * w + h * dh;
      const double acc = dot(go, vu, dh);
      for (std::size_t c = 0; c < dh; ++c) dvu[c] += pt[u] * go[c];
      dp[u] = acc;
      weighted += acc * pt[u];
    }
    const double* qt = q + (row0 + t) * w + h * dh;
    double* dqt = dq + (row0 + t) * w + h * dh;
    for (std::size_t u = 0; u < len; ++u) {
      const double ds = pt[u] * (dp[u] - weighted) * scale;
      if (ds == 0.0) continue;
      const double* ku = k + (row0 + u) * w + h * dh;
      double* dku = dk + (row0 + u) * w + h * dh;
      for (std::size_t c = 0; c < dh; ++c) {
        dqt[c] += ds * ku[c];
        dku[c] += ds * qt[c];
      }
    }
  }
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace serial {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  gemm_tn_rows(0, k, m, k, n, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, k, n, a, b, c);
}

void attention_forward(const AttentionShape& s, const double* q,
                       const double* k, const double* v, double* probs,
                       double* out) {
  for (std::size_t bh = 0; bh < s.batch * s.heads; ++bh) {
    attention_forward_block(s, bh, q, k, v, probs, out);
  }
}

void attention_backward(const AttentionShape& s, const double* q,
                        const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk,
                        double* dv) {
  for (std::size_t bh = 0; bh < s.batch * s.heads; ++bh) {
    attention_backward_block(s, bh, q, k, v, probs, dout, dq, dk, dv);
  }
}

}  // namespace serial

namespace omp {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  const std::size_t blocks = (k + kTnRowBlock - 1) / kTnRowBlock;
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t p0 = blk * kTnRowBlock;
    gemm_tn_rows(p0, std::min(k, p0 + kTnRowBlock), m, k, n, a, b, c);
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, k, n, a, b, c);
}

void attention_forward(const AttentionShape& s, const double* q,
                       const double* k, const double* v, double* probs,
                       double* out) {
  const std::size_t blocks = s.batch * s.heads;
#pragma omp parallel for schedule(static) if (blocks > 8)
  for (std::size_t bh = 0; bh < blocks; ++bh) {
    attention_forward_block(s, bh, q, k, v, probs, out);
  }
}

// Sequences never share rows, and within a sequence each head owns its own
// column block, so (sequence, head) blocks write disjoint gradient slices.
void attention_backward(const AttentionShape& s, const double* q,
                        const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk,
                        double* dv) {
  const std::size_t blocks = s.batch * s.heads;
#pragma omp parallel for schedule(static) if (blocks > 8)
  for (std::size_t bh = 0; bh < blocks; ++bh) {
    attention_backward_block(s, bh, q, k, v, probs, dout, dq, dk, dv);
  }
}

}  // namespace omp

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  if (backend() == Backend::serial) return serial::gemm_nn(m, k, n, a, b, c, accumulate);
  omp::gemm_nn(m, k, n, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  if (backend() == Backend::serial) return serial::gemm_tn(m, k, n, a, b, c);
  omp::gemm_tn(m, k, n, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  if (backend() == Backend::serial) return serial::gemm_nt(m, k, n, a, b, c);
  omp::gemm_nt(m, k, n, a, b, c);
}

void attention_forward(const AttentionShape& s, const double* q,
                       const double* k, const double* v, double* probs,
                       double* out) {
  if (backend() == Backend::serial) return serial::attention_forward(s, q, k, v, probs, out);
  omp::attention_forward(s, q, k, v, probs, out);
}

void attention_backward(const AttentionShape& s, const double* q,
                        const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk,
                        double* dv) {
  if (backend() == Backend::serial) {
    return serial::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
  }
  omp::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
}

}  // namespace pstn::kernels
