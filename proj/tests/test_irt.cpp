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
#include "mergelab/irt.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {
namespace {

ItemParams random_items(Eigen::Index n, int d, uint64_t seed) {
  Rng rng(seed);
  ItemParams it{Eigen::MatrixXd(n, d), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < it.a.size(); ++i) it.a.data()[i] = rng.normal() / std::sqrt(d);
  for (Eigen::Index i = 0; i < n; ++i) it.beta[i] = rng.normal();
  return it;
}

Eigen::VectorXi sample(const Eigen::VectorXd& p, uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXi y(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) y[i] = rng.uniform() < p[i] ? 1 : 0;
  return y;
}

TEST(IrtProb, Values) {
  Eigen::VectorXd g(2), a(2);
  g << 1.0, 2.0;
  a << 0.5, 0.25;
  EXPECT_DOUBLE_EQ(irt_prob(g, a, 1.0), 0.5);
  Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  EXPECT_NEAR(irt_prob(one, one, 0.0), 0.7310585786300049, 1e-15);
  double prev = 1.0;
  for (double beta : {0.0, 5.0, 10.0}) {
    double p = irt_prob(one, one, beta);
    EXPECT_LT(p, prev);
    prev = p;
  }
  EXPECT_GT(irt_prob(one, one, 700.0), 0.0);
  EXPECT_TRUE(std::isfinite(irt_prob(one, one, -1e6)));
  EXPECT_THROW(irt_prob(g, one, 0.0), Error);
}

TEST(IrtProb, Monotone) {
  Eigen::VectorXd a(1);
  a << 1.0;
  double prev = 0.0;
  for (int k = -20; k <= 20; ++k) {
    Eigen::VectorXd g = Eigen::VectorXd::Constant(1, 0.5 * k);
    double p = irt_prob(g, a, 0.0);
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(FitItems, AllCorrectColumn) {
  Correctness Y(200, 5);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Y(i, 0) = 1;
    for (int m = 1; m < 5; ++m) Y(i, m) = rng.uniform() < 0.5;
  }
  IrtFit f = fit_items(Y, IrtFitConfig{});
  EXPECT_GE(irt_probs(f.items, f.gammas.row(0).transpose()).minCoeff(), 0.9);
  for (size_t k = 1; k < f.trace.size(); ++k) EXPECT_GE(f.trace[k], f.trace[k - 1]);
}

TEST(FitItems, SyntheticRecovery) {
  const int d = 3;
  Rng rng(11);
  ItemParams truth{Eigen::MatrixXd(200, d), Eigen::VectorXd(200)};
  for (Eigen::Index i = 0; i < truth.a.size(); ++i) truth.a.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < 200; ++i) truth.beta[i] = rng.normal();
  Eigen::MatrixXd G(20, d);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
  Correctness Y(200, 20);
  Eigen::MatrixXd P(200, 20);
  for (int m = 0; m < 20; ++m) {
    P.col(m) = irt_probs(truth, G.row(m).transpose());
    Y.col(m) = sample(P.col(m), 100 + m);
  }
  IrtFitConfig cfg;
  cfg.d = d;
  cfg.steps = 2000;
  IrtFit f = fit_items(Y, cfg);
  Eigen::MatrixXd Q(200, 20);
  for (int m = 0; m < 20; ++m) Q.col(m) = irt_probs(f.items, f.gammas.row(m).transpose());
  Eigen::ArrayXd x = P.reshaped().array() - P.mean(), y = Q.reshaped().array() - Q.mean();
  double r = (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
  EXPECT_GE(r, 0.8);
}

TEST(FitItems, Preconditions) {
  Correctness one(5, 1);
  one.setOnes();
  EXPECT_THROW(fit_items(one, IrtFitConfig{}), Error);
  Correctness bad(3, 3);
  bad.setConstant(2);
  EXPECT_THROW(fit_items(bad, IrtFitConfig{}), Error);
}

TEST(FitAbility, CorrectVersusWrong) {
  ItemParams it = random_items(100, 15, 1);
  AbilityFit good = fit_ability(Eigen::VectorXi::Ones(100), it);
  AbilityFit bad = fit_ability(Eigen::VectorXi::Zero(100), it);
  EXPECT_GT(irt_probs(it, good.gamma).mean(), irt_probs(it, bad.gamma).mean());
  AbilityFit again = fit_ability(Eigen::VectorXi::Ones(100), it);
  EXPECT_EQ(good.gamma, again.gamma);
}

TEST(FitAbility, ZeroInformationItems) {
  ItemParams it = random_items(30, 4, 2);
  it.a.setZero();
  AbilityFit f = fit_ability(Eigen::VectorXi::Ones(30), it);
  EXPECT_TRUE(f.flat);
  EXPECT_EQ(f.gamma, Eigen::VectorXd::Zero(4));
}

TEST(FitAbility, StationaryPoint) {
  ItemParams it = random_items(80, 5, 3);
  Eigen::VectorXi y = sample(Eigen::VectorXd::Constant(80, 0.6), 4);
  AbilityFit f = fit_ability(y, it);
  Eigen::VectorXd grad = it.a.transpose() * (y.cast<double>() - irt_probs(it, f.gamma)) - f.gamma;
  EXPECT_LE(grad.norm(), 1e-9);
}

std::vector<size_t> first_rows(size_t n) {
  std::vector<size_t> r(n);
  for (size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

TEST(FitXi, ReproducesEndpoint) {
  ItemParams it = random_items(400, 15, 5);
  Rng rng(6);
  Eigen::MatrixXd G(2, 15);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
  Eigen::VectorXd p1 = irt_probs(it, G.row(0).transpose());
  Eigen::VectorXi y = sample(p1, 7);
  XiFit f = fit_xi(y, first_rows(400), G, it);
  Eigen::VectorXd p = irt_probs(it, G.transpose() * f.xi);
  EXPECT_LE((p - p1).cwiseAbs().mean(), 0.05);
  EXPECT_GE(f.xi.minCoeff(), 0.0);
  EXPECT_LE(f.xi.maxCoeff(), 1.0);
}

TEST(FitXi, SingleEndpointGridOracle) {
  ItemParams it = random_items(300, 15, 8);
  Rng rng(9);
  Eigen::MatrixXd G(1, 15);
  for (Eigen::Index i = 0; i < 15; ++i) G(0, i) = rng.normal();
  Eigen::VectorXi y = sample(irt_probs(it, 0.6 * G.row(0).transpose()), 10);
  std::vector<size_t> rows = first_rows(300);
  XiFit f = fit_xi(y, rows, G, it);
  double best = 0.0, best_ll = -1e300;
  for (int k = 0; k <= 1000; ++k) {
    Eigen::VectorXd xi = Eigen::VectorXd::Constant(1, k / 1000.0);
    double ll = xi_log_likelihood(y, rows, G, it, xi);
    if (ll > best_ll) {
      best_ll = ll;
      best = k / 1000.0;
    }
  }
  EXPECT_NEAR(f.xi[0], best, 2e-3);
  EXPECT_GE(f.log_likelihood, best_ll - 1e-9);
}

TEST(FitXi, FlatLikelihood) {
  ItemParams it = random_items(20, 3, 1);
  it.a.setZero();
  Eigen::MatrixXd G = Eigen::MatrixXd::Ones(4, 3);
  XiFit f = fit_xi(Eigen::VectorXi::Ones(20), first_rows(20), G, it);
  EXPECT_TRUE(f.flat);
  EXPECT_EQ(f.xi, Eigen::VectorXd::Constant(4, 0.25));
  EXPECT_THROW(fit_xi(Eigen::VectorXi(0), {}, G, it), Error);
}

TEST(MpIrt, FullSubsetIsObservedAccuracy) {
  ItemParams it = random_items(50, 4, 2);
  Eigen::VectorXi y = sample(Eigen::VectorXd::Constant(50, 0.3), 3);
  Eigen::MatrixXd G = Eigen::MatrixXd::Random(2, 4);
  double est = mp_irt(y, first_rows(50), Eigen::Vector2d(0.3, 0.9), G, it);
  EXPECT_EQ(est, static_cast<double>(y.sum()) / 50.0);
}

TEST(MpIrt, HandInstance) {
  EXPECT_DOUBLE_EQ(mp_irt_formula(1.0, 2, 4.0, 10), 0.5);
  EXPECT_DOUBLE_EQ(mp_irt_formula(3.0, 6, 0.0, 6), 0.5);
  EXPECT_THROW(mp_irt_formula(0.0, 0, 0.0, 5), Error);
}

TEST(MpIrt, ConsistentHalves) {
  // Every predicted probability equals the observed mean 0.5.
  ItemParams it = random_items(40, 3, 4);
  it.a.setZero();
  it.beta.setZero();
  Eigen::VectorXi y(20);
  for (int i = 0; i < 20; ++i) y[i] = i % 2;
  std::vector<size_t> rows;
  for (size_t i = 0; i < 40; i += 2) rows.push_back(i);
  EXPECT_DOUBLE_EQ(mp_irt(y, rows, Eigen::VectorXd::Constant(1, 0.5), Eigen::MatrixXd::Ones(1, 3), it), 0.5);
}

TEST(MpIrt, WithinUnitInterval) {
  for (uint64_t s = 0; s < 50; ++s) {
    ItemParams it = random_items(60, 5, s);
    Rng rng(s, 1);
    Eigen::MatrixXd G(3, 5);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = 3.0 * rng.normal();
    std::vector<size_t> rows = uniform_subset(60, 10, s);
    Eigen::VectorXi y = sample(Eigen::VectorXd::Constant(10, 0.5), s);
    Eigen::VectorXd xi(3);
    xi << rng.uniform(), rng.uniform(), rng.uniform();
    double mp = mp_irt(y, rows, xi, G, it);
    EXPECT_GE(mp, 0.0);
    EXPECT_LE(mp, 1.0);
    double g = gmp_irt(y, mp, 0.5);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(GmpIrt, Endpoints) {
  Eigen::VectorXi y(4);
  y << 1, 0, 1, 1;
  EXPECT_DOUBLE_EQ(gmp_irt(y, 0.2, 1.0), 0.75);
  EXPECT_DOUBLE_EQ(gmp_irt(y, 0.2, 0.0), 0.2);
  Eigen::VectorXi h(2);
  h << 1, 0;
  EXPECT_DOUBLE_EQ(gmp_irt(h, 0.7, 0.5), 0.6);
  EXPECT_THROW(gmp_irt(y, 0.2, 1.5), Error);
}

TEST(FitC, Examples) {
  EXPECT_EQ(fit_c_adaptive({{0.6, 0.9, 0.6}, {0.4, 0.1, 0.4}}), 0.0);
  // Optima at c = 0.2 and c = 0.4.
  EXPECT_NEAR(fit_c_adaptive({{0.52, 1.0, 0.4}, {0.3, 0.0, 0.5}}), 0.3, 1e-12);
}

TEST(FitC, GridMatchesRefinement) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EndpointEstimate> e;
    for (int k = 0; k < 3; ++k) e.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    EXPECT_NEAR(fit_c_adaptive(e), fit_c_adaptive(e, 1001), 0.01);
  }
}

TEST(Stability, FullSubsetAndConstant) {
  auto mean_loss = [](int t, const std::vector<size_t>& rows) {
    double s = 0.0;
    for (size_t r : rows) s += std::sin(0.1 * t * static_cast<double>(r + 1));
    return s / static_cast<double>(rows.size());
  };
  StabilityReport a = stability_harness(mean_loss, 10, 30, 30, 5, 1);
  EXPECT_EQ(a.eps_hat, 0.0);
  EXPECT_EQ(a.gap, 0.0);
  EXPECT_TRUE(a.bound_holds);
  StabilityReport b = stability_harness([](int, const std::vector<size_t>&) { return 0.25; }, 10,
                                        30, 5, 5, 1);
  EXPECT_EQ(b.eps_hat, 0.0);
  EXPECT_EQ(b.gap, 0.0);
  EXPECT_THROW(stability_harness(mean_loss, 0, 30, 5, 5, 1), Error);
  EXPECT_THROW(stability_harness(mean_loss, 3, 30, 5, 1, 1), Error);
}

TEST(Stability, QuadraticLossGrid) {
  for (uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(trial, 7);
    std::vector<double> x(200);
    for (auto& v : x) v = rng.normal();
    auto F = [&](int t, const std::vector<size_t>& rows) {
      const double th = -1.0 + 2.0 * t / 49.0;
      double s = 0.0;
      for (size_t r : rows) s += (th - x[r]) * (th - x[r]);
      return s / static_cast<double>(rows.size());
    };
    StabilityReport r = stability_harness(F, 50, 200, 20, 50, trial);
    EXPECT_TRUE(r.optimality_holds) << trial;
    EXPECT_TRUE(r.expectation_holds) << trial;
  }
}

TEST(Stability, ExpectationBoundNeedsCorrelatedDeviations) {
  // Many equally good thetas with independent item losses: the minimum over
  // a subset is biased low by more than the per-theta mean deviation.
  Rng rng(1);
  Eigen::MatrixXd loss(50, 200);
  for (Eigen::Index i = 0; i < loss.size(); ++i) loss.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  auto F = [&](int t, const std::vector<size_t>& rows) {
    double s = 0.0;
    for (size_t r : rows) s += loss(t, static_cast<Eigen::Index>(r));
    return s / static_cast<double>(rows.size());
  };
  StabilityReport r = stability_harness(F, 50, 200, 20, 50, 3);
  EXPECT_TRUE(r.optimality_holds);
  EXPECT_FALSE(r.expectation_holds);
  EXPECT_GT(r.gap, r.eps_hat);
}

TEST(Unbiasedness, ErrorShrinks) {
  UnbiasednessCurve c = unbiasedness_sim(UnbiasednessConfig{});
  ASSERT_EQ(c.mean_abs_error.size(), 4u);
  EXPECT_LE(c.mean_abs_error.back(), c.mean_abs_error.front());
  EXPECT_TRUE(c.inversions == 0 || (c.inversions == 1 && c.max_inversion <= 0.005));
  UnbiasednessCurve again = unbiasedness_sim(UnbiasednessConfig{});
  EXPECT_EQ(c.mean_abs_error, again.mean_abs_error);
}

TEST(Unbiasedness, FullSubsetIsExact) {
  UnbiasednessConfig cfg;
  cfg.sizes = {200};
  cfg.trials = 10;
  EXPECT_EQ(unbiasedness_sim(cfg).mean_abs_error[0], 0.0);
}

TEST(RankCorrelation, Examples) {
  EXPECT_DOUBLE_EQ(rank_correlation({1, 2, 3, 4}, {1, 2, 3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(rank_correlation({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(rank_correlation({1, 2, 3}, {2, 1, 3}), 0.5);
  EXPECT_NEAR(rank_correlation({1, 2, 2, 3}, {1, 2, 3, 4}), 0.9486832980505138, 1e-12);
  EXPECT_THROW(rank_correlation({1, 2}, {1}), Error);
}

TEST(IrtJson, RoundTrip) {
  IrtModel m;
  m.items = random_items(5, 3, 1);
  m.gammas["a"] = Eigen::Vector3d(0.1, -0.2, 1.0 / 3.0);
  m.gammas["b"] = Eigen::Vector3d(1, 2, 3);
  nlohmann::json j = irt_to_json(m);
  EXPECT_EQ(j["d"], 3);
  IrtModel back = irt_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.items.a, m.items.a);
  EXPECT_EQ(back.items.beta, m.items.beta);
  EXPECT_EQ(back.gammas, m.gammas);
  j["items"][0]["a"] = {1.0};
  EXPECT_THROW(irt_from_json(j), Error);
}

TEST(Subset, UniformInclusion) {
  std::vector<int> hits(20, 0);
  const int draws = 10000;
  for (int s = 0; s < draws; ++s)
    for (size_t i : uniform_subset(20, 5, static_cast<uint64_t>(s))) ++hits[i];
  const double p = 0.25, se = std::sqrt(p * (1 - p) / draws);
  for (int h : hits) EXPECT_LE(std::abs(h / static_cast<double>(draws) - p), 3 * se);
  auto all = uniform_subset(7, 7, 3);
  EXPECT_EQ(all, (std::vector<size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(uniform_subset(20, 5, 9), uniform_subset(20, 5, 9));
  EXPECT_THROW(uniform_subset(5, 0, 1), Error);
}

}  // namespace
}  // namespace mergelab
