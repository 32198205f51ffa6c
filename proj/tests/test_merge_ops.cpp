// Copyright 2026 The mergelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "mergelab/error.hpp"
#include "mergelab/merge_ops.hpp"
#include "test_util.hpp"

namespace mergelab {
namespace {

using testing::random_weights;

ArchSpec arch(std::vector<int> widths) {
  ArchSpec s;
  s.widths = std::move(widths);
  s.activation = Activation::kRelu;
  s.has_bias = true;
  return s;
}

WeightSet from_flat(const ArchSpec& a, std::vector<double> v) {
  return unflatten(a, Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

// ---------------------------------------------------------------- average

TEST(WeightAverage, IdenticalModels) {
  WeightSet w = random_weights(arch({3, 5, 2}), 1);
  EXPECT_TRUE(bit_equal(weight_average({w, w, w}), w));
}

TEST(WeightAverage, Midpoint) {
  WeightSet a = random_weights(arch({3, 5, 2}), 2), b = random_weights(a.arch, 3);
  Eigen::VectorXd m = flatten(weight_average({a, b}));
  Eigen::VectorXd fa = flatten(a), fb = flatten(b);
  for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_EQ(m[i], (fa[i] + fb[i]) / 2);
}

TEST(WeightAverage, OrderInvariant) {
  WeightSet a = random_weights(arch({3, 5, 2}), 4), b = random_weights(a.arch, 5),
            c = random_weights(a.arch, 6);
  EXPECT_TRUE(bit_equal(weight_average({a, b, c}), weight_average({c, a, b})));
  EXPECT_TRUE(bit_equal(weight_average({a, b, c}), weight_average({b, c, a})));
  EXPECT_THROW(weight_average({}), Error);
}

// ---------------------------------------------------------------- slerp

TEST(Slerp, Endpoints) {
  WeightSet a = random_weights(arch({3, 5, 2}), 7), b = random_weights(a.arch, 8);
  EXPECT_TRUE(bit_equal(slerp(a, b, 0.0).weights, a));
  EXPECT_TRUE(bit_equal(slerp(a, b, 1.0).weights, b));
}

TEST(Slerp, OrthonormalMidpoint) {
  ArchSpec s = arch({1, 2});  // 4 parameters
  WeightSet a = from_flat(s, {1, 0, 0, 0}), b = from_flat(s, {0, 0, 1, 0});
  SlerpResult r = slerp(a, b, 0.5);
  EXPECT_FALSE(r.linear_fallback);
  Eigen::VectorXd expect = (flatten(a) + flatten(b)) / std::sqrt(2.0);
  EXPECT_LE((flatten(r.weights) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Slerp, PreservesNorm) {
  WeightSet a = random_weights(arch({3, 5, 2}), 9), b = random_weights(a.arch, 10);
  b *= norm2(a) / norm2(b);
  for (double t : {0.1, 0.3, 0.77})
    EXPECT_NEAR(norm2(slerp(a, b, t).weights), norm2(a), 1e-9 * norm2(a));
}

TEST(Slerp, CollinearFallsBack) {
  WeightSet a = random_weights(arch({3, 5, 2}), 11);
  WeightSet b = 3.0 * a;
  SlerpResult r = slerp(a, b, 0.25);
  EXPECT_TRUE(r.linear_fallback);
  EXPECT_LE(max_abs(r.weights - 1.5 * a), 1e-12);
}

TEST(Slerp, ZeroNormRejected) {
  WeightSet a = random_weights(arch({3, 5, 2}), 12);
  EXPECT_THROW(slerp(a, WeightSet::zeros(a.arch), 0.5), Error);
}

// ---------------------------------------------------------------- ties

TEST(Ties, SingleTaskFullKeep) {
  WeightSet pre = random_weights(arch({3, 5, 2}), 13);
  TaskVector tau = random_weights(pre.arch, 14);
  EXPECT_TRUE(bit_equal(ties_merge(pre, {tau}, 1.0, 0.7), pre + 0.7 * tau));
}

TEST(Ties, OpposingSignsCancel) {
  ArchSpec s = arch({1, 2});
  WeightSet pre = WeightSet::zeros(s);
  WeightSet out = ties_merge(pre, {from_flat(s, {1, 0, 0, 0}), from_flat(s, {-1, 0, 0, 0})}, 1.0, 1.0);
  EXPECT_EQ(flatten(out)[0], 0.0);
}

TEST(Ties, ZeroedCountIsExact) {
  TaskVector tau = random_weights(arch({7, 11, 3}), 15);
  const Eigen::Index P = flatten(tau).size();
  for (double k : {0.01, 0.1, 0.2, 0.5, 0.9, 1.0}) {
    auto mask = top_k_mask(flatten(tau), k);
    long kept = std::count(mask.begin(), mask.end(), 1);
    EXPECT_EQ(P - kept, P - static_cast<long>(std::ceil(k * P - 1e-9)));
  }
  EXPECT_THROW(top_k_mask(flatten(tau), 0.0), Error);
}

TEST(Ties, HandTrace) {
  ArchSpec s = arch({1, 3});  // flattened: W00 W10 W20 b0 b1 b2
  TaskVector t1 = from_flat(s, {3, -1, 2, 0.5, -4, 1});
  TaskVector t2 = from_flat(s, {-2, 2, 1, -3, -1, -1});
  TaskVector t3 = from_flat(s, {1, -3, -2, 0.2, 4, 1});
  WeightSet out = ties_merge(WeightSet::zeros(s), {t1, t2, t3}, 0.5, 0.5);
  Eigen::VectorXd f = flatten(out);
  std::vector<double> expect{1.5, -1.5, 0, -1.5, 0, 0};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(f[i], expect[static_cast<size_t>(i)]) << i;
}

TEST(Ties, OutputInAgreeingHull) {
  WeightSet pre = WeightSet::zeros(arch({4, 6, 3}));
  std::vector<TaskVector> taus;
  for (uint64_t i = 0; i < 4; ++i) taus.push_back(random_weights(pre.arch, 20 + i));
  Eigen::VectorXd out = flatten(ties_merge(pre, taus, 0.3, 1.0));
  std::vector<Eigen::VectorXd> tr;
  for (const auto& t : taus) {
    Eigen::VectorXd f = flatten(t);
    auto m = top_k_mask(f, 0.3);
    for (Eigen::Index i = 0; i < f.size(); ++i)
      if (!m[static_cast<size_t>(i)]) f[i] = 0;
    tr.push_back(f);
  }
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    double lo = 0, hi = 0;
    for (const auto& f : tr) {
      if (out[i] > 0 && f[i] > 0) hi = std::max(hi, f[i]), lo = lo == 0 ? f[i] : std::min(lo, f[i]);
      if (out[i] < 0 && f[i] < 0) lo = std::min(lo, f[i]), hi = hi == 0 ? f[i] : std::max(hi, f[i]);
    }
    if (out[i] != 0) {
      EXPECT_GE(out[i], lo - 1e-15);
      EXPECT_LE(out[i], hi + 1e-15);
    }
  }
}

// ---------------------------------------------------------------- dare

TEST(Dare, ZeroDropIsIdentity) {
  TaskVector tau = random_weights(arch({3, 4, 2}), 30);
  EXPECT_TRUE(bit_equal(dare(tau, 0.0, 1), tau));
}

TEST(Dare, SameSeedSameOutput) {
  TaskVector tau = random_weights(arch({3, 4, 2}), 31);
  EXPECT_TRUE(bit_equal(dare(tau, 0.4, 9), dare(tau, 0.4, 9)));
  EXPECT_FALSE(bit_equal(dare(tau, 0.4, 9), dare(tau, 0.4, 10)));
  EXPECT_THROW(dare(tau, 1.0, 1), Error);
}

TEST(Dare, UnbiasedMonteCarlo) {
  TaskVector tau = random_weights(arch({2, 3}), 32);  // 9 parameters
  Eigen::VectorXd f = flatten(tau);
  const double p = 0.3;
  const int N = 10000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(f.size());
  for (int s = 0; s < N; ++s) sum += flatten(dare(tau, p, static_cast<uint64_t>(s)));
  Eigen::VectorXd mean = sum / N;
  // Per-coordinate 3 std-err, widened to 4 for the 9 simultaneous checks;
  // the pooled z-score is held to 3.
  double pooled = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    double se = std::abs(f[i]) * std::sqrt(p / (1 - p)) / std::sqrt(static_cast<double>(N));
    EXPECT_LE(std::abs(mean[i] - f[i]), 4 * se + 1e-15) << i;
    pooled += (mean[i] - f[i]) / se;
  }
  EXPECT_LE(std::abs(pooled) / std::sqrt(static_cast<double>(f.size())), 3.0);
}

// ---------------------------------------------------------------- recipes

TEST(Recipe, TaskArithmeticZeroIsPretrained) {
  WeightSet pre = random_weights(arch({3, 4, 2}), 40);
  std::vector<WeightSet> models{random_weights(pre.arch, 41), random_weights(pre.arch, 42)};
  MergeRecipe r{MergeMethod::kTaskArithmetic, {0.0, 0.0}, 0};
  EXPECT_TRUE(bit_equal(apply_recipe(r, pre, models), pre));
}

TEST(Recipe, DareWithZeroDropEqualsTaskArithmetic) {
  WeightSet pre = random_weights(arch({3, 4, 2}), 43);
  std::vector<WeightSet> models{random_weights(pre.arch, 44), random_weights(pre.arch, 45)};
  MergeRecipe ta{MergeMethod::kTaskArithmetic, {0.3, 0.6}, 0};
  MergeRecipe da{MergeMethod::kDareTa, {0.0, 0.3, 0.6}, 77};
  EXPECT_TRUE(bit_equal(apply_recipe(ta, pre, models), apply_recipe(da, pre, models)));
}

TEST(Recipe, TiesDispatchMatchesHandTrace) {
  ArchSpec s = arch({1, 3});
  WeightSet pre = WeightSet::zeros(s);
  std::vector<WeightSet> models{from_flat(s, {3, -1, 2, 0.5, -4, 1}),
                                from_flat(s, {-2, 2, 1, -3, -1, -1}),
                                from_flat(s, {1, -3, -2, 0.2, 4, 1})};
  MergeRecipe r{MergeMethod::kTies, {0.5, 0.5}, 0};
  Eigen::VectorXd f = flatten(apply_recipe(r, pre, models));
  std::vector<double> expect{1.5, -1.5, 0, -1.5, 0, 0};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(f[i], expect[static_cast<size_t>(i)]);
}

TEST(Recipe, Validation) {
  WeightSet pre = random_weights(arch({3, 4, 2}), 46);
  std::vector<WeightSet> three(3, pre);
  EXPECT_THROW(apply_recipe({MergeMethod::kSlerp, {0.5}, 0}, pre, three), Error);
  EXPECT_THROW(apply_recipe({MergeMethod::kTaskArithmetic, {0.5}, 0}, pre, three), Error);
  EXPECT_THROW(apply_recipe({MergeMethod::kTies, {0.5, 1.5}, 0}, pre, three), Error);
  EXPECT_THROW(apply_recipe({MergeMethod::kDareTa, {0.995, 1, 1, 1}, 0}, pre, three), Error);
}

TEST(Recipe, JsonRoundTrip) {
  MergeRecipe r{MergeMethod::kDareTies, {0.2, 0.4, 0.9}, 123};
  nlohmann::json j = recipe_to_json(r);
  EXPECT_EQ(j.dump(), R"({"coeffs":[0.2,0.4,0.9],"method":"dare_ties","seed":123})");
  MergeRecipe back = recipe_from_json(j);
  EXPECT_EQ(back.method, r.method);
  EXPECT_EQ(back.coeffs, r.coeffs);
  EXPECT_EQ(back.seed, r.seed);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"method":"dare_ta","coeffs":[0]})")), Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"method":"ties","coeffs":[0.1,1],"seed":3})")), Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"method":"nope"})")), Error);
}

}  // namespace
}  // namespace mergelab
