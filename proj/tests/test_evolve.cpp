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

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mergelab/error.hpp"
#include "mergelab/evolve.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {
namespace {

Genome box(size_t n, double lo = 0.0, double hi = 1.0) {
  return Genome{std::vector<double>(n, 0.5 * (lo + hi)), std::vector<double>(n, lo),
                std::vector<double>(n, hi)};
}

TEST(Extract, FullSizeIsWholeSet) {
  auto s = extract(30, 30, 4);
  std::sort(s.begin(), s.end());
  for (size_t i = 0; i < 30; ++i) EXPECT_EQ(s[i], i);
}

TEST(Extract, SeededAndRangeChecked) {
  EXPECT_EQ(extract(50, 7, 3), extract(50, 7, 3));
  EXPECT_NE(extract(50, 7, 3), extract(50, 7, 4));
  EXPECT_THROW(extract(10, 0, 1), Error);
  EXPECT_THROW(extract(10, 11, 1), Error);
}

TEST(Extract, InclusionFrequencyIsUniform) {
  const size_t N = 20, k = 5;
  const int draws = 10000;
  std::vector<int> hits(N, 0);
  for (int s = 0; s < draws; ++s)
    for (size_t i : extract(N, k, static_cast<uint64_t>(s))) ++hits[i];
  const double p = static_cast<double>(k) / N;
  const double se = std::sqrt(p * (1 - p) / draws);
  for (size_t i = 0; i < N; ++i) EXPECT_NEAR(hits[i] / static_cast<double>(draws), p, 3 * se) << i;
}

TEST(Sbx, IdenticalParentsGiveIdenticalChildren) {
  Genome g = box(4);
  g.genes = {0.1, 0.4, 0.9, 0.0};
  for (uint64_t s = 0; s < 50; ++s) {
    Offspring o = sbx(g, g, 15.0, s);
    EXPECT_EQ(o.a.genes, g.genes);
    EXPECT_EQ(o.b.genes, g.genes);
  }
}

TEST(Sbx, ChildrenStayInBoundsUnderFuzz) {
  Rng rng(11);
  for (int t = 0; t < 10000; ++t) {
    Genome a = box(3), b = box(3);
    for (size_t i = 0; i < 3; ++i) {
      const double lo = rng.uniform(-2.0, 1.0), hi = lo + rng.uniform(0.0, 3.0);
      a.lo[i] = b.lo[i] = lo;
      a.hi[i] = b.hi[i] = hi;
      a.genes[i] = rng.uniform(lo, hi);
      b.genes[i] = rng.uniform() < 0.1 ? lo : rng.uniform(lo, hi);
    }
    const double eta = rng.uniform(0.0, 30.0);
    Offspring o = sbx(a, b, eta, static_cast<uint64_t>(t));
    for (size_t i = 0; i < 3; ++i) {
      EXPECT_GE(o.a.genes[i], a.lo[i]);
      EXPECT_LE(o.a.genes[i], a.hi[i]);
      EXPECT_GE(o.b.genes[i], a.lo[i]);
      EXPECT_LE(o.b.genes[i], a.hi[i]);
    }
    Genome m = poly_mutate(o.a, eta, 1.0, static_cast<uint64_t>(t));
    for (size_t i = 0; i < 3; ++i) {
      EXPECT_GE(m.genes[i], a.lo[i]);
      EXPECT_LE(m.genes[i], a.hi[i]);
    }
  }
}

TEST(Sbx, DeterministicAndLargeEtaStaysNearParents) {
  Genome a = box(5), b = box(5);
  for (size_t i = 0; i < 5; ++i) {
    a.genes[i] = 0.3 + 0.05 * i;
    b.genes[i] = 0.6 - 0.02 * i;
  }
  Offspring x = sbx(a, b, 15.0, 9), y = sbx(a, b, 15.0, 9);
  EXPECT_EQ(x.a.genes, y.a.genes);
  EXPECT_EQ(x.b.genes, y.b.genes);
  Offspring z = sbx(a, b, 1e7, 2);
  for (size_t i = 0; i < 5; ++i) {
    const double lo = std::min(a.genes[i], b.genes[i]), hi = std::max(a.genes[i], b.genes[i]);
    for (double c : {z.a.genes[i], z.b.genes[i]})
      EXPECT_TRUE(std::abs(c - lo) < 1e-4 || std::abs(c - hi) < 1e-4) << c;
  }
}

TEST(Sbx, RejectsMismatchedBounds) {
  Genome a = box(2), b = box(2, 0.0, 2.0);
  EXPECT_THROW(sbx(a, b, 15.0, 0), Error);
}

TEST(PolyMutate, RateZeroIsIdentity) {
  Genome g = box(6);
  g.genes = {0.0, 0.1, 0.5, 0.7, 0.99, 1.0};
  for (uint64_t s = 0; s < 100; ++s) EXPECT_EQ(poly_mutate(g, 20.0, 0.0, s).genes, g.genes);
}

TEST(PolyMutate, RateOneMovesGenesAndIsDeterministic) {
  Genome g = box(6);
  Genome m = poly_mutate(g, 20.0, 1.0, 5);
  EXPECT_EQ(m.genes, poly_mutate(g, 20.0, 1.0, 5).genes);
  int moved = 0;
  for (size_t i = 0; i < 6; ++i) moved += m.genes[i] != g.genes[i];
  EXPECT_EQ(moved, 6);
  EXPECT_THROW(poly_mutate(g, 20.0, 1.5, 0), Error);
}

TEST(GaRun, ConstantFitnessKeepsInitialGenome) {
  GaConfig cfg;
  cfg.seed = 3;
  Genome seed = box(2);
  seed.genes = {0.2, 0.8};
  GaResult r = ga_run(cfg, box(2), [](const Genome&) { return 0.5; }, {seed});
  EXPECT_EQ(r.best.genes, seed.genes);
  ASSERT_EQ(r.history.size(), 8u);
  for (double h : r.history) EXPECT_EQ(h, 0.5);
  EXPECT_EQ(r.evaluations, 25 + 7 * 24);
}

TEST(GaRun, SphereSurrogateMedianOverSeeds) {
  std::vector<double> err;
  for (uint64_t s = 0; s < 10; ++s) {
    GaConfig cfg;
    cfg.seed = s;
    GaResult r = ga_run(cfg, box(1), [](const Genome& g) {
      return 1.0 - (g.genes[0] - 0.7) * (g.genes[0] - 0.7);
    });
    err.push_back(std::abs(r.best.genes[0] - 0.7));
  }
  std::nth_element(err.begin(), err.begin() + 5, err.end());
  EXPECT_LE(err[5], 0.05);
}

TEST(GaRun, HistoryNonDecreasingAndDeterministic) {
  auto f = [](const Genome& g) {
    double s = 0;
    for (double x : g.genes) s += std::sin(7 * x) * x;
    return s;
  };
  GaConfig cfg;
  cfg.seed = 17;
  cfg.iters = 12;
  GaResult a = ga_run(cfg, box(3), f), b = ga_run(cfg, box(3), f);
  for (size_t i = 1; i < a.history.size(); ++i) EXPECT_GE(a.history[i], a.history[i - 1]);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.best.genes, b.best.genes);
  cfg.threads = 3;
  GaResult c = ga_run(cfg, box(3), f);
  EXPECT_EQ(a.history, c.history);
  EXPECT_EQ(a.best.genes, c.best.genes);
}

TEST(GaRun, FailingCandidatesAreQuarantined) {
  GaConfig cfg;
  cfg.seed = 1;
  GaResult r = ga_run(cfg, box(1), [](const Genome& g) {
    if (g.genes[0] > 0.8) throw std::runtime_error("boom");
    return g.genes[0];
  });
  EXPECT_GT(r.quarantined, 0);
  EXPECT_LE(r.best.genes[0], 0.8);
  EXPECT_GT(r.best_fitness, 0.6);
}

bool brute_dominated(const std::vector<std::vector<double>>& p, size_t i, bool minimize) {
  for (size_t j = 0; j < p.size(); ++j) {
    if (j == i) continue;
    bool no_worse = true, strictly = false;
    for (size_t k = 0; k < p[i].size(); ++k) {
      const double d = minimize ? p[i][k] - p[j][k] : p[j][k] - p[i][k];
      if (d < 0) no_worse = false;
      if (d > 0) strictly = true;
    }
    if (no_worse && strictly) return true;
  }
  return false;
}

TEST(ParetoFront, HandInstance) {
  EXPECT_EQ(pareto_front({{1, 2}, {2, 1}, {2, 2}}, true), (std::vector<size_t>{0, 1}));
  EXPECT_EQ(pareto_front({{1, 2}, {2, 1}, {2, 2}}, false), (std::vector<size_t>{2}));
  EXPECT_EQ(pareto_front({{3, 4}}, true), (std::vector<size_t>{0}));
  EXPECT_EQ(pareto_front({{1, 1}, {1, 1}, {2, 2}}, true), (std::vector<size_t>{0, 1}));
  EXPECT_THROW(pareto_front({{1, 2}, {1}}, true), Error);
}

TEST(ParetoFront, MatchesBruteForce) {
  Rng rng(8);
  for (int t = 0; t < 300; ++t) {
    const size_t n = 1 + rng.below(12), K = 2 + rng.below(2);
    std::vector<std::vector<double>> p(n, std::vector<double>(K));
    for (auto& v : p)
      for (auto& x : v) x = static_cast<double>(rng.below(4));
    for (bool minimize : {true, false}) {
      std::vector<size_t> want;
      for (size_t i = 0; i < n; ++i)
        if (!brute_dominated(p, i, minimize)) want.push_back(i);
      EXPECT_EQ(pareto_front(p, minimize), want);
    }
  }
}

TEST(NsgaRun, IdenticalCandidatesFormTheFront) {
  GaConfig cfg;
  cfg.pop = 10;
  cfg.iters = 3;
  NsgaResult r = nsga_run(cfg, box(2), [](const Genome&) { return std::vector<double>{0.3, 0.4}; });
  EXPECT_EQ(r.front.size(), r.population.size());
}

TEST(NsgaRun, FrontSurvivesRandomCloud) {
  auto f = [](const Genome& g) {
    return std::vector<double>{g.genes[0], 1.0 - g.genes[0] * g.genes[0]};
  };
  GaConfig cfg;
  cfg.seed = 2;
  NsgaResult r = nsga_run(cfg, box(2), f);
  ASSERT_FALSE(r.front.empty());
  Rng rng(99);
  std::vector<std::vector<double>> cloud;
  for (int i = 0; i < 10000; ++i) {
    Genome g = box(2);
    g.genes = {rng.uniform(), rng.uniform()};
    cloud.push_back(f(g));
  }
  for (const auto& o : r.front_objectives) {
    std::vector<std::vector<double>> pts = cloud;
    pts.push_back(o);
    EXPECT_FALSE(brute_dominated(pts, pts.size() - 1, false));
  }
  std::vector<size_t> idx = pareto_front(r.objectives, false);
  ASSERT_EQ(idx.size(), r.front.size());
  for (size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(r.objectives[idx[i]], r.front_objectives[i]);
}

TEST(NsgaRun, TradeoffFrontIsSpread) {
  auto f = [](const Genome& g) {
    const double pen = g.genes[1];
    return std::vector<double>{g.genes[0] - pen, 1.0 - g.genes[0] - pen};
  };
  GaConfig cfg;
  cfg.seed = 4;
  cfg.iters = 20;
  NsgaResult r = nsga_run(cfg, box(2), f);
  double lo = 1, hi = 0;
  for (const auto& g : r.front) {
    lo = std::min(lo, g.genes[0]);
    hi = std::max(hi, g.genes[0]);
  }
  EXPECT_GT(hi - lo, 0.5);
  EXPECT_THROW(nsga_run(cfg, box(1), [](const Genome&) { return std::vector<double>{1.0}; }), Error);
}

TEST(InitialGenomes, TaskArithmeticAndSlerp) {
  auto ta = initial_genomes(MergeMethod::kTaskArithmetic, 2);
  ASSERT_EQ(ta.size(), 3u);
  EXPECT_EQ(ta[0].genes, (std::vector<double>{1, 0}));
  EXPECT_EQ(ta[1].genes, (std::vector<double>{0, 1}));
  EXPECT_EQ(ta[2].genes, (std::vector<double>{0.5, 0.5}));
  auto sl = initial_genomes(MergeMethod::kSlerp, 2);
  ASSERT_EQ(sl.size(), 3u);
  EXPECT_EQ(sl[2].genes, (std::vector<double>{0.5}));
  auto dare = initial_genomes(MergeMethod::kDareTa, 2);
  EXPECT_EQ(dare[0].genes, (std::vector<double>{0, 1, 0}));
  for (const auto& g : dare) g.validate();
}

TEST(Estimators, ParseRoundTrip) {
  for (auto e : {Estimator::kObserved, Estimator::kMpIrt, Estimator::kGmpIrt})
    EXPECT_EQ(parse_estimator(estimator_name(e)), e);
  EXPECT_THROW(parse_estimator("best"), Error);
}

struct MergeSetup {
  WeightSet pre;
  std::vector<WeightSet> ends;
  std::vector<Dataset> tasks;
};

MergeSetup two_tasks(uint64_t s) {
  ArchSpec a;
  a.widths = {16, 32, 32, 3};
  a.activation = Activation::kRelu;
  MergeSetup out;
  out.pre = init_weights(a, 7000 + s);
  for (uint64_t t = 0; t < 2; ++t) {
    DatasetSpec ds{3, 16, 300, 1000 * s + t, 3.0, 0, "t"};
    Dataset tr = make_dataset(ds);
    ds.split = 1;
    ds.samples = 200;
    out.tasks.push_back(make_dataset(ds));
    TrainConfig tc;
    tc.epochs = 30;
    tc.seed = s;
    out.ends.push_back(train(out.pre, tr, tc).trajectory.back());
  }
  return out;
}

TEST(EvaluateCandidate, IdentityGenomeReproducesEndpoint) {
  MergeSetup st = two_tasks(0);
  Merge3Config cfg;
  MergeProblem p = build_problem(st.pre, st.ends, st.tasks, cfg);
  Genome g = initial_genomes(MergeMethod::kTaskArithmetic, 2)[0];
  WeightSet merged = apply_recipe(recipe_for(g, p.method, p.seed), p.theta_pre, p.endpoints);
  EXPECT_LE((flatten(merged) - flatten(st.ends[0])).cwiseAbs().maxCoeff(), 1e-12);
  FitnessReport r = evaluate_candidate(g, p);
  ASSERT_FALSE(r.quarantined);
  ASSERT_EQ(r.tasks.size(), 2u);
  for (size_t t = 0; t < 2; ++t) {
    Eigen::VectorXi y = correctness(st.ends[0], st.tasks[t], p.subsets[t]);
    EXPECT_DOUBLE_EQ(r.tasks[t].observed_sub_acc, y.cast<double>().mean());
    for (double v : {r.tasks[t].mp_irt, r.tasks[t].gmp_irt, r.tasks[t].chosen}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(r.tasks[t].chosen, r.tasks[t].gmp_irt);
  }
  EXPECT_EQ(r.fitness, std::min(r.tasks[0].chosen, r.tasks[1].chosen));
  EXPECT_EQ(r.evaluation_count, 1);
}

TEST(EvaluateCandidate, FullSubsetWithUnitMixIsExactAccuracy) {
  MergeSetup st = two_tasks(1);
  Merge3Config cfg;
  cfg.subset_size = 200;
  cfg.c = 1.0;
  MergeProblem p = build_problem(st.pre, st.ends, st.tasks, cfg);
  Genome g = initial_genomes(MergeMethod::kTaskArithmetic, 2)[2];
  g.genes = {0.7, 0.4};
  WeightSet merged = apply_recipe(recipe_for(g, p.method, p.seed), p.theta_pre, p.endpoints);
  FitnessReport r = evaluate_candidate(g, p);
  for (size_t t = 0; t < 2; ++t)
    EXPECT_NEAR(r.tasks[t].chosen, evaluate(merged, st.tasks[t]).accuracy, 1e-15);
  p.aggregate = Aggregate::kMean;
  FitnessReport m = evaluate_candidate(g, p);
  EXPECT_NEAR(m.fitness, 0.5 * (m.tasks[0].chosen + m.tasks[1].chosen), 1e-15);
}

TEST(EvaluateCandidate, BadGenomeIsQuarantined) {
  MergeSetup st = two_tasks(2);
  MergeProblem p = build_problem(st.pre, st.ends, st.tasks, Merge3Config{});
  Genome g = box(2);
  g.genes = {0.5, 1.5};
  FitnessReport r = evaluate_candidate(g, p);
  EXPECT_TRUE(r.quarantined);
  EXPECT_EQ(r.fitness, 0.0);
  EXPECT_FALSE(r.error.empty());
}

TEST(BuildProblem, ShapesAndCalibratedMix) {
  MergeSetup st = two_tasks(3);
  Merge3Config cfg;
  cfg.irt_dim = 4;
  MergeProblem p = build_problem(st.pre, st.ends, st.tasks, cfg);
  ASSERT_EQ(p.subsets.size(), 2u);
  EXPECT_EQ(p.subsets[0].size(), 20u);
  EXPECT_EQ(p.irt[0].items.a.rows(), 200);
  EXPECT_EQ(p.irt[0].items.a.cols(), 4);
  EXPECT_EQ(p.irt[1].endpoint_gammas.rows(), 2);
  EXPECT_GE(p.c, 0.0);
  EXPECT_LE(p.c, 1.0);
  cfg.subset_size = 0;
  EXPECT_THROW(build_problem(st.pre, st.ends, st.tasks, cfg), Error);
}

TEST(Merge3Run, ReportsTruthAndIsDeterministic) {
  MergeSetup st = two_tasks(0);
  Merge3Config cfg;
  cfg.seed = 5;
  Merge3Report a = merge3_run(st.pre, st.ends, st.tasks, cfg);
  Merge3Report b = merge3_run(st.pre, st.ends, st.tasks, cfg);
  EXPECT_EQ(a.best.genes, b.best.genes);
  EXPECT_EQ(a.ga.history, b.ga.history);
  WeightSet merged = apply_recipe(a.recipe, st.pre, st.ends);
  for (size_t t = 0; t < 2; ++t) EXPECT_EQ(a.truth[t], evaluate(merged, st.tasks[t]).accuracy);
  for (size_t i = 1; i < a.ga.history.size(); ++i) EXPECT_GE(a.ga.history[i], a.ga.history[i - 1]);
  EXPECT_EQ(a.final_truth.size(), 25u);
  auto j = merge3_to_json(a);
  EXPECT_EQ(j["generations"].size(), 8u);
  EXPECT_TRUE(j["generations"][7].contains("truth"));
  EXPECT_FALSE(j["generations"][0].contains("truth"));
  EXPECT_EQ(j["history"].size(), 8u);
}

TEST(Merge3Run, MultiObjectiveFront) {
  MergeSetup st = two_tasks(1);
  Merge3Config cfg;
  cfg.multi_objective = true;
  Merge3Report r = merge3_run(st.pre, st.ends, st.tasks, cfg);
  ASSERT_FALSE(r.nsga.front.empty());
  for (const auto& o : r.nsga.front_objectives) EXPECT_EQ(o.size(), 2u);
  EXPECT_EQ(merge3_to_json(r)["pareto_front"].size(), r.nsga.front.size());
}

TEST(Merge3Run, EstimateGapWithinStabilityRadius) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    MergeSetup st = two_tasks(seed);
    Merge3Config cfg;
    cfg.seed = seed;
    Merge3Report r = merge3_run(st.pre, st.ends, st.tasks, cfg);
    const auto& pop = r.ga.populations.back();
    std::vector<WeightSet> models;
    for (const auto& g : pop)
      models.push_back(apply_recipe(recipe_for(g, cfg.method, r.recipe.seed), st.pre, st.ends));
    for (size_t t = 0; t < 2; ++t) {
      SubsetFitness F = [&](int th, const std::vector<size_t>& rows) {
        return correctness(models[static_cast<size_t>(th)], st.tasks[t], rows).cast<double>().mean();
      };
      StabilityReport s = stability_on_subsets(F, static_cast<int>(models.size()), 200, {r.subsets[t]});
      EXPECT_LE(std::abs(r.estimate.tasks[t].chosen - r.truth[t]), s.eps_hat + 0.05)
          << "seed " << seed << " task " << t;
    }
  }
}

TEST(NegativeTransfer, HandInstance) {
  Eigen::MatrixXi Y(5, 2);
  Y << 1, 0,
       0, 1,
       1, 1,
       0, 0,
       0, 1;
  Eigen::VectorXi m(5);
  m << 1, 0, 0, 1, 1;
  Ntr r = negative_transfer_rate(Y, m);
  EXPECT_FALSE(r.undefined);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  Ntr u = negative_transfer_rate(Eigen::MatrixXi::Zero(3, 2), Eigen::VectorXi::Ones(3));
  EXPECT_TRUE(u.undefined);
  EXPECT_EQ(u.value, 0.0);
  EXPECT_THROW(negative_transfer_rate(Y, Eigen::VectorXi::Ones(4)), Error);
}

}  // namespace
}  // namespace mergelab
