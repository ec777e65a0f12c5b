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

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation in execution order; node ids are therefore
// already a topological order, and backward() walks them once in reverse.
// A tape and the Vars it hands out belong to a single thread.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "pstn/rng.hpp"
#include "pstn/tensor.hpp"

namespace pstn::ad {

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient of the loss w.r.t. the node's output and pushes
  // contributions into the parents' gradient buffers.
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr);
  }

  // Records an op output. The node tracks gradients iff some parent does;
  // `fn` is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  // Gradient accumulated so far; empty when nothing flowed into the node.
  const std::vector<double>& grad(Var v) const { return nodes_[v.id()].grad; }
  // Gradient as a tensor of the node's shape (zeros when nothing flowed).
  Tensor grad_tensor(Var v) const;

  // Zero-initialized on first use. Only valid for nodes that require grad.
  std::span<double> grad_buffer(Var v);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn fn;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn);

  std::deque<Node> nodes_;
};

// ---- elementwise ---------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// x[m,n] + bias[n] broadcast over rows.
Var add_row(Var x, Var bias);
// Exact (erf) GELU.
Var gelu(Var x);

// ---- linear algebra -------------------------------------------------------

// a[m,k] · b[k,n]. Throws DimensionError naming both shapes.
Var matmul(Var a, Var b);
// a[m,k] · b[p,k]^T.
Var matmul_nt(Var a, Var b);

// ---- normalization / probabilities ---------------------------------------

// Softmax along `axis` of a tensor of any rank.
Var softmax(Var x, std::size_t axis);
// Row-wise layer normalization of x[m,n] with per-column gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Mean over rows of -log softmax(logits[r])[targets[r]].
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

// ---- indexing -------------------------------------------------------------

// Rows of table[V,d] picked by ids; IndexError on out-of-range ids.
Var embedding(Var table, std::span<const std::size_t> ids);
Var select_rows(Var x, std::span<const std::size_t> rows);

// ---- reductions -----------------------------------------------------------

Var sum(Var x);
// sum_i w[i] * (x[i] - ref[i])^2 with a constant reference and weights.
Var weighted_sq_dist(Var x, std::span<const double> ref,
                     std::span<const double> weights);

// ---- attention ------------------------------------------------------------

struct AttentionLayout {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 0;
  std::vector<std::size_t> lengths;
};

// Multi-head scaled dot-product attention on pre-projected q, k, v of shape
// [batch*seq_len, width]. Returns the per-head mixed values concatenated
// along columns (head h owns columns [h*dh, (h+1)*dh)).
Var attention(Var q, Var k, Var v, const AttentionLayout& layout);

// Multiplies column block h of x by gates[h].
Var scale_column_blocks(Var x, std::span<const double> gates);

// Overwrites column block `block` (width `block_width`) of rows
// [row_begin, row_begin + value.rows()) with a constant.
struct ColumnBlockPatch {
  std::size_t block = 0;
  std::size_t row_begin = 0;
  Tensor value;
};
Var patch_column_blocks(Var x, std::size_t block_width,
                        std::span<const ColumnBlockPatch> patches);

// ---- noise ----------------------------------------------------------------

// Lower clamp applied to log-variances before exponentiation.
inline constexpr double kLogVarFloor = -30.0;

// params + exp(log_var / 2) * z, z ~ N(0, 1) drawn from `rng` in element
// order. Differentiable in both params and log_var.
Var gaussian_perturb(Var params, Var log_var, RngStream& rng);

// KL( N(0, diag exp q) || N(0, diag exp p) ) for a tracked q and fixed p.
Var kl_diag_gaussian(Var q, std::span<const double> p);

}  // namespace pstn::ad
