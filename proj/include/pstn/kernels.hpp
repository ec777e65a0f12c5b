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

#pragma once

// Dense kernels behind the autodiff ops. Every kernel exists twice: a plain
// serial loop nest (the reference) and an OpenMP version that parallelizes
// the outermost independent loop. Both accumulate each output element in
// the same order, so they agree bit for bit at any thread count.

#include <cstddef>
#include <span>

namespace pstn::kernels {

enum class Backend { serial, parallel };

void set_backend(Backend b);
Backend backend();

// Scaled dot-product attention layout: rows are (sequence, position) pairs,
// `seq_len` positions per sequence, `heads` contiguous column blocks of
// `head_dim` columns. Keys at positions >= lengths[b] are masked out.
struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::span<const std::size_t> lengths;
  std::size_t width() const { return heads * head_dim; }
};

#define PSTN_KERNEL_DECLS                                                      \
  /* C[m,n] (+)= A[m,k] B[k,n] */                                              \
  void gemm_nn(std::size_t m, std::size_t k, std::size_t n,                    \
               const double* a, const double* b, double* c, bool accumulate); \
  /* C[k,n] += A[m,k]^T B[m,n] */                                              \
  void gemm_tn(std::size_t m, std::size_t k, std::size_t n,                    \
               const double* a, const double* b, double* c);                   \
  /* C[m,k] += A[m,n] B[k,n]^T */                                              \
  void gemm_nt(std::size_t m, std::size_t k, std::size_t n,                    \
               const double* a, const double* b, double* c);                   \
  /* probs: [batch, heads, seq_len, seq_len]; out: [batch*seq_len, width] */   \
  void attention_forward(const AttentionShape& s, const double* q,             \
                         const double* k, const double* v, double* probs,      \
                         double* out);                                         \
  /* Accumulates into dq, dk, dv. */                                           \
  void attention_backward(const AttentionShape& s, const double* q,            \
                          const double* k, const double* v,                    \
                          const double* probs, const double* dout, double* dq, \
                          double* dk, double* dv);

namespace serial {
PSTN_KERNEL_DECLS
}  // namespace serial

namespace omp {
PSTN_KERNEL_DECLS
}  // namespace omp

// Dispatch on the current backend.
PSTN_KERNEL_DECLS

#undef PSTN_KERNEL_DECLS

}  // namespace pstn::kernels
