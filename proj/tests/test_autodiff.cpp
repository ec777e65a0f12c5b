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

#include <cmath>

#include "gradcheck_suite.hpp"
#include "pstn/autodiff.hpp"
#include "pstn/optim.hpp"

using namespace pstn;

TEST(GradCheck, EveryOpPassesFiniteDifferences) {
  for (const auto& r : gradsuite::op_checks()) {
    EXPECT_LT(r.error, 1e-4) << r.name;
  }
}

TEST(GradCheck, FullModelPassesFiniteDifferences) {
  const auto r = gradsuite::model_check();
  EXPECT_LT(r.error, 1e-4);
}

TEST(Autodiff, ValuesMatchClosedForms) {
  ad::Tape t;
  auto x = t.leaf(Tensor::matrix(1, 3, {1.0, 2.0, 3.0}));
  auto sm = ad::softmax(x, 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(sm.value().data[2], std::exp(3.0) / z, 1e-15);
  auto g = ad::gelu(t.leaf(Tensor::vector({1.0})));
  EXPECT_NEAR(g.value().data[0], 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-15);
  const std::vector<std::size_t> tgt{2};
  auto ce = ad::cross_entropy(x, tgt);
  EXPECT_NEAR(ce.value().data[0], std::log(z) - 3.0, 1e-14);
}

TEST(Autodiff, GradientAccumulatesOverReuse) {
  ad::Tape t;
  auto x = t.leaf(Tensor::vector({2.0}));
  auto y = ad::mul(x, x);  // x^2
  auto z = ad::add(y, x);  // x^2 + x
  t.backward(ad::sum(z));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 5.0);
}

TEST(Autodiff, ErrorsNameShapes) {
  ad::Tape t;
  auto a = t.leaf(Tensor({2, 3}));
  auto b = t.leaf(Tensor({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
  EXPECT_THROW(t.backward(a), ContractError);
  const std::vector<std::size_t> ids{5};
  EXPECT_THROW(ad::embedding(a, ids), IndexError);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  ad::Tape t;
  auto c = t.constant(Tensor::vector({1.0, 2.0}));
  auto x = t.leaf(Tensor::vector({3.0, 4.0}));
  t.backward(ad::sum(ad::mul(c, x)));
  EXPECT_TRUE(t.grad(c).empty());
  EXPECT_DOUBLE_EQ(t.grad(x)[1], 2.0);
}

TEST(Autodiff, PerturbRespectsFloorBound) {
  // With the log-variance at the floor no element moves more than
  // exp(floor/2) * 6 in a million draws.
  ad::Tape t;
  const std::size_t n = 1000000;
  auto p = t.constant(Tensor({n}, 0.5));
  auto lv = t.constant(Tensor({n}, -100.0));
  RngStream rng(1);
  auto out = ad::gaussian_perturb(p, lv, rng);
  const double bound = std::exp(ad::kLogVarFloor / 2) * 6;
  double worst = 0;
  for (double v : out.value().data) worst = std::max(worst, std::abs(v - 0.5));
  EXPECT_LE(worst, bound);
  EXPECT_GT(worst, 0.0);
}

TEST(Autodiff, KlZeroAtPrior) {
  ad::Tape t;
  const std::vector<double> p{-1.0, 2.0};
  auto q = t.leaf(Tensor::vector(p));
  auto kl = ad::kl_diag_gaussian(q, p);
  EXPECT_EQ(kl.value().data[0], 0.0);
}

TEST(Autodiff, HandArithmeticCases) {
  ad::Tape t;
  auto id = t.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  auto m = t.leaf(Tensor::matrix(2, 2, {3, -1, 2, 5}));
  EXPECT_EQ(ad::matmul(id, m).value(), m.value());
  auto a = t.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto ones = t.leaf(Tensor::matrix(2, 1, {1, 1}));
  EXPECT_EQ(ad::matmul(a, ones).value().data, (std::vector<double>{3, 7}));
  auto z = t.leaf(Tensor::matrix(1, 3, {0, 0, 0}));
  for (double v : ad::softmax(z, 1).value().data) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  auto c = t.leaf(Tensor::matrix(1, 4, {2, 2, 2, 2}));
  auto ln = ad::layer_norm(c, t.constant(Tensor({4}, 1.0)), t.constant(Tensor({4}, 0.0)));
  for (double v : ln.value().data) EXPECT_NEAR(v, 0.0, 1e-12);
  const std::vector<std::size_t> zero{0};
  EXPECT_NEAR(ad::cross_entropy(t.leaf(Tensor::matrix(1, 2, {1e9, 0})), zero).value().data[0], 0.0, 1e-12);
  EXPECT_NEAR(ad::cross_entropy(t.leaf(Tensor::matrix(1, 2, {0, 0})), zero).value().data[0], std::log(2.0), 1e-15);
}

TEST(Autodiff, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  ad::Tape t;
  const Tensor logits = gradsuite::random_tensor({3, 4}, 40);
  auto x = t.leaf(logits);
  const std::vector<std::size_t> targets{1, 0, 3};
  t.backward(ad::cross_entropy(x, targets));
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits.at(r, c));
    for (std::size_t c = 0; c < 4; ++c) {
      const double expect = (std::exp(logits.at(r, c)) / z - (c == targets[r] ? 1.0 : 0.0)) / 3.0;
      EXPECT_NEAR(t.grad(x)[r * 4 + c], expect, 1e-14);
    }
  }
}

TEST(Autodiff, PerturbIsDeterministicWithUnitVariance) {
  ad::Tape t;
  const std::size_t n = 1000000;
  auto p = t.constant(Tensor({n}, 0.0));
  auto lv = t.constant(Tensor({n}, 0.0));
  RngStream r1(77), r2(77);
  const auto a = ad::gaussian_perturb(p, lv, r1).value();
  const auto b = ad::gaussian_perturb(p, lv, r2).value();
  EXPECT_EQ(a, b);
  double s = 0, s2 = 0;
  for (double v : a.data) {
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(AdamW, ZeroGradientZeroDecayIsNoop) {
  AdamW opt(AdamWConfig{0.1, 0.9, 0.98, 1e-3, 0.0});
  std::vector<double> w{1.5, -2.0};
  const std::vector<double> g{0.0, 0.0};
  std::vector<ParamSlot> slots{{w, g, 1.0}};
  opt.step(slots);
  opt.step(slots);
  EXPECT_EQ(w, (std::vector<double>{1.5, -2.0}));
}
