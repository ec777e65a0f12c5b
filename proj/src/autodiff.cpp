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

#include "pstn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "pstn/kernels.hpp"

namespace pstn::ad {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  if (nodes_.size() >= UINT32_MAX) throw ContractError("tape overflow");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents,
                 BackwardFn fn) {
  bool any = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw ContractError("operand belongs to a different tape");
    any = any || nodes_[p.id()].requires_grad;
  }
  return push(std::move(value), any, any ? std::move(fn) : nullptr);
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) throw ContractError("gradient requested for a constant node");
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Tensor Tape::grad_tensor(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape, 0.0);
  return Tensor(n.value.shape, n.grad);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  if (value(loss).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(value(loss).shape));
  }
  if (!requires_grad(loss)) return;
  grad_buffer(loss)[0] += 1.0;
  for (std::int64_t id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.fn || n.grad.empty()) continue;
    n.fn(*this, n.grad);
  }
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_matrix(const char* op, Var a) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_str(a.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  return a.tape()->record(std::move(out), {a, b},
                          [a, b](Tape& t, std::span<const double> g) {
    for (Var p : {a, b}) {
      if (!t.requires_grad(p)) continue;
      auto dp = t.grad_buffer(p);
      for (std::size_t i = 0; i < g.size(); ++i) dp[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  return a.tape()->record(std::move(out), {a, b},
                          [a, b](Tape& t, std::span<const double> g) {
    if (t.requires_grad(a)) {
      auto da = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto db = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b},
                          [a, b](Tape& t, std::span<const double> g) {
    const auto& av = t.value(a).data;
    const auto& bv = t.value(b).data;
    if (t.requires_grad(a)) {
      auto da = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto db = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& x : out.data) x *= s;
  return a.tape()->record(std::move(out), {a},
                          [a, s](Tape& t, std::span<const double> g) {
    auto da = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * s;
  });
}

Var add_row(Var x, Var bias) {
  require_matrix("add_row", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (bias.value().size() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] += bv[c];
  }
  return x.tape()->record(std::move(out), {x, bias},
                          [x, bias, m, n](Tape& t, std::span<const double> g) {
    if (t.requires_grad(x)) {
      auto dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      auto db = t.grad_buffer(bias);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) db[c] += g[r * n + c];
      }
    }
  });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return x.tape()->record(std::move(out), {x},
                          [x](Tape& t, std::span<const double> g) {
    const auto& xv = t.value(x).data;
    auto dx = t.grad_buffer(x);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) +
                         " and " + shape_str(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor out(Shape{m, n});
  kernels::gemm_nn(m, k, n, a.value().data.data(), b.value().data.data(),
                   out.data.data(), false);
  return a.tape()->record(std::move(out), {a, b},
                          [a, b, m, k, n](Tape& t, std::span<const double> g) {
    if (t.requires_grad(a)) {
      kernels::gemm_nt(m, k, n, g.data(), t.value(b).data.data(),
                       t.grad_buffer(a).data());
    }
    if (t.requires_grad(b)) {
      kernels::gemm_tn(m, k, n, t.value(a).data.data(), g.data(),
                       t.grad_buffer(b).data());
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1]) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(as) +
                         " and " + shape_str(bs) + "^T");
  }
  const std::size_t m = as[0], k = as[1], p = bs[0];
  Tensor out(Shape{m, p});
  kernels::gemm_nt(m, p, k, a.value().data.data(), b.value().data.data(),
                   out.data.data());
  return a.tape()->record(std::move(out), {a, b},
                          [a, b, m, k, p](Tape& t, std::span<const double> g) {
    if (t.requires_grad(a)) {
      kernels::gemm_nn(m, p, k, g.data(), t.value(b).data.data(),
                       t.grad_buffer(a).data(), true);
    }
    if (t.requires_grad(b)) {
      kernels::gemm_tn(m, p, k, g.data(), t.value(a).data.data(),
                       t.grad_buffer(b).data());
    }
  });
}

Var softmax(Var x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor out = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double* base = out.data.data() + o * n * inner + in;
      double mx = base[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, base[j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        base[j * inner] = std::exp(base[j * inner] - mx);
        z += base[j * inner];
      }
      for (std::size_t j = 0; j < n; ++j) base[j * inner] /= z;
    }
  }
  std::vector<double> yv = out.data;
  return x.tape()->record(
      std::move(out), {x},
      [x, outer, inner, n, yv = std::move(yv)](Tape& t, std::span<const double> g) {
        auto dx = t.grad_buffer(x);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * yv[base + j * inner];
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t idx = base + j * inner;
              dx[idx] += yv[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_matrix("layer_norm", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) +
                         "/" + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const auto& xv = x.value().data;
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;
  std::vector<double> xhat(m * n), rstd(m);
  Tensor out(Shape{m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * rstd[r];
      xhat[r * n + c] = h;
      out.data[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](
          Tape& t, std::span<const double> g) {
        const auto& gv = t.value(gain).data;
        if (t.requires_grad(gain)) {
          auto dg = t.grad_buffer(gain);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) dg[c] += g[r * n + c] * xhat[r * n + c];
        }
        if (t.requires_grad(bias)) {
          auto db = t.grad_buffer(bias);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) db[c] += g[r * n + c];
        }
        if (t.requires_grad(x)) {
          auto dx = t.grad_buffer(x);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < m; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double d = g[r * n + c] * gv[c];
              mean_d += d;
              mean_dx += d * xhat[r * n + c];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t c = 0; c < n; ++c) {
              const double d = g[r * n + c] * gv[c];
              dx[r * n + c] += rstd[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
            }
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  require_matrix("cross_entropy", logits);
  const std::size_t m = logits.value().rows(), c = logits.value().cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  const auto& lv = logits.value().data;
  std::vector<double> probs(m * c);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= c) {
      throw IndexError("cross_entropy: invalid target index " +
                       std::to_string(targets[r]) + " for " +
                       std::to_string(c) + " classes");
    }
    const double* row = lv.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(row[j] - mx);
      z += probs[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    total += (mx + std::log(z)) - row[targets[r]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return logits.tape()->record(
      Tensor::scalar(total / static_cast<double>(m)), {logits},
      [logits, m, c, probs = std::move(probs), tgt = std::move(tgt)](
          Tape& t, std::span<const double> g) {
        auto dl = t.grad_buffer(logits);
        const double s = g[0] / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = (j == tgt[r]) ? 1.0 : 0.0;
            dl[r * c + j] += s * (probs[r * c + j] - onehot);
          }
        }
      });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  require_matrix("embedding", table);
  const std::size_t rows = table.value().rows();
  for (std::size_t id : ids) {
    if (id >= rows) {
      throw IndexError("embedding: id " + std::to_string(id) +
                       " out of range for table with " + std::to_string(rows) +
                       " rows");
    }
  }
  return select_rows(table, ids);
}

Var select_rows(Var x, std::span<const std::size_t> rows) {
  require_matrix("select_rows", x);
  const std::size_t n = x.value().rows(), d = x.value().cols();
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  Tensor out(Shape{rows.size(), d});
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw IndexError("select_rows: row " + std::to_string(rows[i]) +
                       " out of range " + std::to_string(n));
    }
    std::copy_n(xv.begin() + rows[i] * d, d, out.data.begin() + i * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape()->record(std::move(out), {x},
                          [x, d, idx = std::move(idx)](Tape& t, std::span<const double> g) {
    auto dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) dx[idx[i] * d + c] += g[i * d + c];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  return x.tape()->record(Tensor::scalar(s), {x},
                          [x](Tape& t, std::span<const double> g) {
    auto dx = t.grad_buffer(x);
    for (double& v : dx) v += g[0];
  });
}

Var weighted_sq_dist(Var x, std::span<const double> ref,
                     std::span<const double> weights) {
  const std::size_t n = x.value().size();
  if (ref.size() != n || weights.size() != n) {
    throw DimensionError("weighted_sq_dist: reference/weights length " +
                         std::to_string(ref.size()) + "/" +
                         std::to_string(weights.size()) + " vs tensor " +
                         shape_str(x.shape()));
  }
  const auto& xv = x.value().data;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = xv[i] - ref[i];
    s += weights[i] * d * d;
  }
  std::vector<double> r(ref.begin(), ref.end()), w(weights.begin(), weights.end());
  return x.tape()->record(
      Tensor::scalar(s), {x},
      [x, r = std::move(r), w = std::move(w)](Tape& t, std::span<const double> g) {
        const auto& xv = t.value(x).data;
        auto dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < dx.size(); ++i) {
          dx[i] += g[0] * 2.0 * w[i] * (xv[i] - r[i]);
        }
      });
}

Var attention(Var q, Var k, Var v, const AttentionLayout& layout) {
  require_same_shape("attention(q,k)", q, k);
  require_same_shape("attention(q,v)", q, v);
  require_matrix("attention", q);
  const std::size_t rows = q.value().rows(), width = q.value().cols();
  if (layout.heads == 0 || width % layout.heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) +
                         " not divisible by " + std::to_string(layout.heads) + " heads");
  }
  if (rows != layout.batch * layout.seq_len || layout.lengths.size() != layout.batch) {
    throw DimensionError("attention: layout does not match input " + shape_str(q.shape()));
  }
  for (std::size_t len : layout.lengths) {
    if (len == 0 || len > layout.seq_len) throw DimensionError("attention: bad sequence length");
  }
  auto lengths = std::make_shared<std::vector<std::size_t>>(layout.lengths);
  kernels::AttentionShape s{layout.batch, layout.seq_len, layout.heads,
                            width / layout.heads, *lengths};
  std::vector<double> probs(layout.batch * layout.heads * layout.seq_len * layout.seq_len);
  Tensor out(Shape{rows, width});
  kernels::attention_forward(s, q.value().data.data(), k.value().data.data(),
                             v.value().data.data(), probs.data(), out.data.data());
  return q.tape()->record(
      std::move(out), {q, k, v},
      [q, k, v, s, lengths, probs = std::move(probs)](Tape& t, std::span<const double> g) {
        // Constant operands still need somewhere to receive their gradient.
        const std::size_t n = t.value(q).size();
        std::vector<double> scratch;
        std::size_t constants = 0;
        for (Var x : {q, k, v}) constants += t.requires_grad(x) ? 0 : 1;
        scratch.assign(constants * n, 0.0);
        std::size_t used = 0;
        auto target = [&](Var x) -> double* {
          if (t.requires_grad(x)) return t.grad_buffer(x).data();
          return scratch.data() + (used++) * n;
        };
        double* dq = target(q);
        double* dk = target(k);
        double* dv = target(v);
        kernels::attention_backward(s, t.value(q).data.data(), t.value(k).data.data(),
                                    t.value(v).data.data(), probs.data(), g.data(),
                                    dq, dk, dv);
      });
}

Var scale_column_blocks(Var x, std::span<const double> gates) {
  require_matrix("scale_column_blocks", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (gates.empty() || n % gates.size() != 0) {
    throw DimensionError("scale_column_blocks: " + std::to_string(gates.size()) +
                         " gates for " + shape_str(x.shape()));
  }
  const std::size_t bw = n / gates.size();
  std::vector<double> gv(gates.begin(), gates.end());
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] *= gv[c / bw];
  return x.tape()->record(std::move(out), {x},
                          [x, m, n, bw, gv = std::move(gv)](Tape& t, std::span<const double> g) {
    auto dx = t.grad_buffer(x);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += g[r * n + c] * gv[c / bw];
  });
}

Var patch_column_blocks(Var x, std::size_t block_width,
                        std::span<const ColumnBlockPatch> patches) {
  require_matrix("patch_column_blocks", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out = x.value();
  std::vector<char> patched(m * n, 0);
  for (const auto& p : patches) {
    const std::size_t pr = p.value.rows();
    if (p.value.rank() != 2 || p.value.cols() != block_width ||
        p.row_begin + pr > m || (p.block + 1) * block_width > n) {
      throw DimensionError("patch for block " + std::to_string(p.block) +
                           " has shape " + shape_str(p.value.shape) +
                           ", expected [" + std::to_string(m - std::min(m, p.row_begin)) +
                           "x" + std::to_string(block_width) + "] within " +
                           shape_str(x.shape()));
    }
    for (std::size_t r = 0; r < pr; ++r) {
      for (std::size_t c = 0; c < block_width; ++c) {
        const std::size_t idx = (p.row_begin + r) * n + p.block * block_width + c;
        out.data[idx] = p.value.data[r * block_width + c];
        patched[idx] = 1;
      }
    }
  }
  return x.tape()->record(std::move(out), {x},
                          [x, patched = std::move(patched)](Tape& t, std::span<const double> g) {
    auto dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!patched[i]) dx[i] += g[i];
    }
  });
}

Var gaussian_perturb(Var params, Var log_var, RngStream& rng) {
  require_same_shape("gaussian_perturb", params, log_var);
  const std::size_t n = params.value().size();
  std::vector<double> z(n), sigma(n);
  Tensor out = params.value();
  const auto& lv = log_var.value().data;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = rng.normal();
    sigma[i] = std::exp(std::max(lv[i], kLogVarFloor) / 2.0);
    out.data[i] += sigma[i] * z[i];
  }
  return params.tape()->record(
      std::move(out), {params, log_var},
      [params, log_var, z = std::move(z), sigma = std::move(sigma)](
          Tape& t, std::span<const double> g) {
        if (t.requires_grad(params)) {
          auto dp = t.grad_buffer(params);
          for (std::size_t i = 0; i < g.size(); ++i) dp[i] += g[i];
        }
        if (t.requires_grad(log_var)) {
          const auto& lv = t.value(log_var).data;
          auto dl = t.grad_buffer(log_var);
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (lv[i] < kLogVarFloor) continue;
            dl[i] += g[i] * z[i] * 0.5 * sigma[i];
          }
        }
      });
}

Var kl_diag_gaussian(Var q, std::span<const double> p) {
  const auto& qv = q.value().data;
  if (p.size() != qv.size()) {
    throw DimensionError("kl_diag_gaussian: prior length " + std::to_string(p.size()) +
                         " vs posterior " + shape_str(q.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < qv.size(); ++i) {
    s += 0.5 * (p[i] - qv[i]) + 0.5 * std::exp(qv[i] - p[i]) - 0.5;
  }
  std::vector<double> pv(p.begin(), p.end());
  return q.tape()->record(Tensor::scalar(s), {q},
                          [q, pv = std::move(pv)](Tape& t, std::span<const double> g) {
    const auto& qv = t.value(q).data;
    auto dq = t.grad_buffer(q);
    for (std::size_t i = 0; i < dq.size(); ++i) {
      dq[i] += g[0] * 0.5 * (std::exp(qv[i] - pv[i]) - 1.0);
    }
  });
}

}  // namespace pstn::ad
