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

#include "mergelab/evolve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "mergelab/error.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {

void Genome::validate() const {
  require(lo.size() == genes.size() && hi.size() == genes.size(), Status::kShapeMismatch,
          "genome: bounds and genes differ in length");
  for (size_t i = 0; i < genes.size(); ++i) {
    require(lo[i] <= hi[i], Status::kInvalidArgument, "genome: lo > hi");
    require(genes[i] >= lo[i] && genes[i] <= hi[i], Status::kInvalidArgument,
            "genome: gene " + std::to_string(i) + " outside its bounds");
  }
}

Genome genome_for(const MergeRecipe& r, size_t num_models) {
  Genome g;
  recipe_bounds(r.method, num_models, g.lo, g.hi);
  g.genes = r.coeffs;
  if (g.genes.size() != g.lo.size()) {
    g.genes.resize(g.lo.size());
    for (size_t i = 0; i < g.genes.size(); ++i) g.genes[i] = 0.5 * (g.lo[i] + g.hi[i]);
  }
  return g;
}

MergeRecipe recipe_for(const Genome& g, MergeMethod method, uint64_t seed) {
  return MergeRecipe{method, g.genes, seed};
}

std::vector<size_t> extract(size_t dataset_size, size_t k, uint64_t seed) {
  return uniform_subset(dataset_size, k, seed);
}

namespace {

void check_same_bounds(const Genome& a, const Genome& b) {
  a.validate();
  b.validate();
  require(a.lo == b.lo && a.hi == b.hi, Status::kInvalidArgument,
          "sbx: parents have different bounds");
}

double sbx_betaq(double beta, double eta, double u) {
  const double alpha = 2.0 - std::pow(beta, -(eta + 1.0));
  if (u <= 1.0 / alpha) return std::pow(u * alpha, 1.0 / (eta + 1.0));
  return std::pow(1.0 / (2.0 - u * alpha), 1.0 / (eta + 1.0));
}

}  // namespace

Offspring sbx(const Genome& pa, const Genome& pb, double eta_c, uint64_t seed) {
  check_same_bounds(pa, pb);
  require(eta_c >= 0, Status::kInvalidArgument, "sbx: eta_c must be >= 0");
  Rng rng(seed);
  Offspring out{pa, pb};
  for (size_t i = 0; i < pa.genes.size(); ++i) {
    const double x1 = pa.genes[i], x2 = pb.genes[i];
    if (rng.uniform() > 0.5 || std::abs(x1 - x2) <= 1e-14) continue;
    const double y1 = std::min(x1, x2), y2 = std::max(x1, x2);
    const double yl = pa.lo[i], yu = pa.hi[i];
    const double u = rng.uniform();
    double c1 = 0.5 * ((y1 + y2) - sbx_betaq(1.0 + 2.0 * (y1 - yl) / (y2 - y1), eta_c, u) * (y2 - y1));
    double c2 = 0.5 * ((y1 + y2) + sbx_betaq(1.0 + 2.0 * (yu - y2) / (y2 - y1), eta_c, u) * (y2 - y1));
    c1 = std::clamp(c1, yl, yu);
    c2 = std::clamp(c2, yl, yu);
    if (rng.uniform() <= 0.5) std::swap(c1, c2);
    out.a.genes[i] = c1;
    out.b.genes[i] = c2;
  }
  return out;
}

Genome poly_mutate(const Genome& g, double eta_m, double rate, uint64_t seed) {
  g.validate();
  require(eta_m >= 0 && rate >= 0 && rate <= 1, Status::kInvalidArgument,
          "poly_mutate: need eta_m >= 0 and rate in [0, 1]");
  Rng rng(seed);
  Genome out = g;
  for (size_t i = 0; i < g.genes.size(); ++i) {
    if (!(rng.uniform() < rate)) continue;
    const double yl = g.lo[i], yu = g.hi[i];
    if (yu <= yl) continue;
    const double y = g.genes[i];
    const double d1 = (y - yl) / (yu - yl), d2 = (yu - y) / (yu - yl);
    const double r = rng.uniform();
    const double pw = 1.0 / (eta_m + 1.0);
    double dq;
    if (r < 0.5) {
      const double val = 2.0 * r + (1.0 - 2.0 * r) * std::pow(1.0 - d1, eta_m + 1.0);
      dq = std::pow(val, pw) - 1.0;
    } else {
      const double val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * std::pow(1.0 - d2, eta_m + 1.0);
      dq = 1.0 - std::pow(val, pw);
    }
    out.genes[i] = std::clamp(y + dq * (yu - yl), yl, yu);
  }
  return out;
}

const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::kObserved: return "observed";
    case Estimator::kMpIrt: return "mp_irt";
    case Estimator::kGmpIrt: return "gmp_irt";
  }
  return "?";
}

Estimator parse_estimator(const std::string& s) {
  if (s == "observed") return Estimator::kObserved;
  if (s == "mp_irt") return Estimator::kMpIrt;
  if (s == "gmp_irt") return Estimator::kGmpIrt;
  fail(Status::kInvalidArgument, "unknown estimator '" + s + "' (observed, mp_irt, gmp_irt)");
}

double min_over(const std::vector<double>& v) {
  require(!v.empty(), Status::kInvalidArgument, "min_over: empty");
  return *std::min_element(v.begin(), v.end());
}

Eigen::VectorXi correctness(const WeightSet& w, const Dataset& d, const std::vector<size_t>& rows) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), d.X.cols());
  for (size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < d.size(), Status::kInvalidArgument, "correctness: row out of range");
    X.row(static_cast<Eigen::Index>(r)) = d.X.row(static_cast<Eigen::Index>(rows[r]));
  }
  std::vector<int> pred = predict(w, X);
  Eigen::VectorXi y(static_cast<Eigen::Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) y[static_cast<Eigen::Index>(r)] = pred[r] == d.y[rows[r]];
  return y;
}

namespace {

std::vector<size_t> all_rows(size_t n) {
  std::vector<size_t> r(n);
  std::iota(r.begin(), r.end(), size_t{0});
  return r;
}

double mean_of(const Eigen::VectorXi& y) {
  return static_cast<double>(y.sum()) / static_cast<double>(y.size());
}

double aggregate(const std::vector<double>& v, Aggregate a) {
  if (a == Aggregate::kMin) return min_over(v);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

FitnessReport evaluate_candidate(const Genome& g, const MergeProblem& p) {
  FitnessReport rep;
  rep.evaluation_count = 1;
  try {
    g.validate();
    WeightSet merged = apply_recipe(recipe_for(g, p.method, p.seed), p.theta_pre, p.endpoints);
    std::vector<double> chosen;
    for (size_t t = 0; t < p.tasks.size(); ++t) {
      const auto& rows = p.subsets[t];
      Eigen::VectorXi y = correctness(merged, p.tasks[t], rows);
      TaskFitness tf;
      tf.observed_sub_acc = mean_of(y);
      XiFit xi = fit_xi(y, rows, p.irt[t].endpoint_gammas, p.irt[t].items);
      tf.mp_irt = mp_irt(y, rows, xi.xi, p.irt[t].endpoint_gammas, p.irt[t].items);
      tf.gmp_irt = gmp_irt(y, tf.mp_irt, p.c);
      switch (p.estimator) {
        case Estimator::kObserved: tf.chosen = tf.observed_sub_acc; break;
        case Estimator::kMpIrt: tf.chosen = tf.mp_irt; break;
        case Estimator::kGmpIrt: tf.chosen = tf.gmp_irt; break;
      }
      rep.tasks.push_back(tf);
      chosen.push_back(tf.chosen);
    }
    rep.fitness = aggregate(chosen, p.aggregate);
  } catch (const std::exception& e) {
    rep.tasks.clear();
    rep.fitness = 0.0;
    rep.quarantined = true;
    rep.error = e.what();
  }
  return rep;
}

namespace {

template <typename T, typename Fn>
std::vector<T> map_parallel(size_t n, int threads, Fn fn) {
  std::vector<T> out(n);
  const size_t workers = std::max<size_t>(1, std::min<size_t>(n, static_cast<size_t>(std::max(1, threads))));
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (size_t i = w; i < n; i += workers) out[i] = fn(i);
    });
  for (auto& t : pool) t.join();
  return out;
}

struct Scored {
  double value = 0.0;
  bool quarantined = false;
};

std::vector<Scored> score_all(const std::vector<Genome>& pop, const FitnessFn& f, int threads) {
  return map_parallel<Scored>(pop.size(), threads, [&](size_t i) {
    try {
      double v = f(pop[i]);
      if (!std::isfinite(v)) return Scored{0.0, true};
      return Scored{v, false};
    } catch (const std::exception&) {
      return Scored{0.0, true};
    }
  });
}

std::vector<Genome> initial_population(const GaConfig& cfg, const Genome& bounds,
                                       const std::vector<Genome>& seeds) {
  require(cfg.pop >= 2 && cfg.iters >= 0, Status::kInvalidArgument,
          "ga: need pop >= 2 and iters >= 0");
  bounds.validate();
  std::vector<Genome> pop;
  for (const auto& s : seeds) {
    if (static_cast<int>(pop.size()) == cfg.pop) break;
    Genome g = bounds;
    require(s.genes.size() == g.genes.size(), Status::kShapeMismatch, "ga: seed genome length");
    for (size_t i = 0; i < g.genes.size(); ++i) g.genes[i] = std::clamp(s.genes[i], g.lo[i], g.hi[i]);
    pop.push_back(std::move(g));
  }
  Rng rng(cfg.seed, 0);
  while (static_cast<int>(pop.size()) < cfg.pop) {
    Genome g = bounds;
    for (size_t i = 0; i < g.genes.size(); ++i) g.genes[i] = rng.uniform(g.lo[i], g.hi[i]);
    pop.push_back(std::move(g));
  }
  return pop;
}

double mutation_rate(const GaConfig& cfg, const Genome& bounds) {
  if (cfg.mutation_rate >= 0) return cfg.mutation_rate;
  return bounds.genes.empty() ? 0.0 : 1.0 / static_cast<double>(bounds.genes.size());
}

uint64_t pair_seed(const GaConfig& cfg, int gen, int k) {
  return derive_seed(cfg.seed, (static_cast<uint64_t>(gen) << 32) + static_cast<uint64_t>(k));
}

}  // namespace

GaResult ga_run(const GaConfig& cfg, const Genome& bounds, const FitnessFn& f,
                const std::vector<Genome>& seeds) {
  std::vector<Genome> pop = initial_population(cfg, bounds, seeds);
  const double rate = mutation_rate(cfg, bounds);
  GaResult res;
  auto record = [&](const std::vector<Genome>& p, const std::vector<Scored>& s) {
    std::vector<double> fit;
    for (const auto& v : s) {
      fit.push_back(v.value);
      res.quarantined += v.quarantined;
    }
    res.evaluations += static_cast<int>(s.size());
    res.populations.push_back(p);
    res.fitness.push_back(fit);
  };
  std::vector<Scored> scores = score_all(pop, f, cfg.threads);
  record(pop, scores);
  auto best_index = [](const std::vector<Scored>& s) {
    size_t b = 0;
    for (size_t i = 1; i < s.size(); ++i)
      if (s[i].value > s[b].value) b = i;
    return b;
  };
  size_t b = best_index(scores);
  res.history.push_back(scores[b].value);
  for (int gen = 1; gen <= cfg.iters; ++gen) {
    Rng sel(cfg.seed, 1 + static_cast<uint64_t>(gen));
    auto tournament = [&]() {
      size_t i = static_cast<size_t>(sel.below(pop.size()));
      size_t j = static_cast<size_t>(sel.below(pop.size()));
      if (scores[j].value > scores[i].value || (scores[j].value == scores[i].value && j < i)) return j;
      return i;
    };
    std::vector<Genome> children;
    for (int k = 0; static_cast<int>(children.size()) < cfg.pop - 1; ++k) {
      const Genome& a = pop[tournament()];
      const Genome& c = pop[tournament()];
      const uint64_t s = pair_seed(cfg, gen, k);
      Offspring o = sbx(a, c, cfg.eta_c, derive_seed(s, 0));
      children.push_back(poly_mutate(o.a, cfg.eta_m, rate, derive_seed(s, 1)));
      if (static_cast<int>(children.size()) < cfg.pop - 1)
        children.push_back(poly_mutate(o.b, cfg.eta_m, rate, derive_seed(s, 2)));
    }
    std::vector<Scored> child_scores = score_all(children, f, cfg.threads);
    std::vector<Genome> next{pop[b]};
    std::vector<Scored> next_scores{scores[b]};
    next.insert(next.end(), children.begin(), children.end());
    next_scores.insert(next_scores.end(), child_scores.begin(), child_scores.end());
    pop = std::move(next);
    scores = std::move(next_scores);
    res.evaluations += static_cast<int>(child_scores.size());
    for (const auto& v : child_scores) res.quarantined += v.quarantined;
    std::vector<double> fit;
    for (const auto& v : scores) fit.push_back(v.value);
    res.populations.push_back(pop);
    res.fitness.push_back(fit);
    b = best_index(scores);
    res.history.push_back(scores[b].value);
  }
  res.best = pop[b];
  res.best_fitness = scores[b].value;
  return res;
}

namespace {

// a dominates b when a is no worse everywhere and better somewhere.
bool dominates(const std::vector<double>& a, const std::vector<double>& b, bool minimize) {
  bool better = false;
  for (size_t k = 0; k < a.size(); ++k) {
    const double x = minimize ? -a[k] : a[k], y = minimize ? -b[k] : b[k];
    if (x < y) return false;
    if (x > y) better = true;
  }
  return better;
}

std::vector<std::vector<size_t>> nondominated_sort(const std::vector<std::vector<double>>& pts,
                                                   bool minimize) {
  const size_t n = pts.size();
  std::vector<std::vector<size_t>> dominated(n);
  std::vector<int> count(n, 0);
  std::vector<std::vector<size_t>> fronts(1);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (dominates(pts[i], pts[j], minimize)) dominated[i].push_back(j);
      else if (dominates(pts[j], pts[i], minimize)) ++count[i];
    }
    if (count[i] == 0) fronts[0].push_back(i);
  }
  while (!fronts.back().empty()) {
    std::vector<size_t> next;
    for (size_t i : fronts.back())
      for (size_t j : dominated[i])
        if (--count[j] == 0) next.push_back(j);
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

std::vector<double> crowding(const std::vector<std::vector<double>>& pts,
                             const std::vector<size_t>& front) {
  const size_t m = front.size();
  std::vector<double> d(m, 0.0);
  if (m == 0) return d;
  const size_t K = pts[front[0]].size();
  for (size_t k = 0; k < K; ++k) {
    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return pts[front[a]][k] < pts[front[b]][k]; });
    const double lo = pts[front[order.front()]][k], hi = pts[front[order.back()]][k];
    d[order.front()] = d[order.back()] = std::numeric_limits<double>::infinity();
    if (hi <= lo) continue;
    for (size_t r = 1; r + 1 < m; ++r)
      d[order[r]] += (pts[front[order[r + 1]]][k] - pts[front[order[r - 1]]][k]) / (hi - lo);
  }
  return d;
}

}  // namespace

std::vector<size_t> pareto_front(const std::vector<std::vector<double>>& points, bool minimize) {
  for (const auto& p : points)
    require(p.size() == points[0].size(), Status::kShapeMismatch, "pareto_front: arity mismatch");
  std::vector<size_t> out;
  for (size_t i = 0; i < points.size(); ++i) {
    bool dom = false;
    for (size_t j = 0; j < points.size() && !dom; ++j)
      dom = j != i && dominates(points[j], points[i], minimize);
    if (!dom) out.push_back(i);
  }
  return out;
}

NsgaResult nsga_run(const GaConfig& cfg, const Genome& bounds, const ObjectivesFn& f,
                    const std::vector<Genome>& seeds) {
  std::vector<Genome> pop = initial_population(cfg, bounds, seeds);
  const double rate = mutation_rate(cfg, bounds);
  size_t arity = 0;
  auto score = [&](const std::vector<Genome>& p) {
    auto objs = map_parallel<std::vector<double>>(p.size(), cfg.threads, [&](size_t i) {
      try {
        return f(p[i]);
      } catch (const std::exception&) {
        return std::vector<double>{};
      }
    });
    for (const auto& o : objs) arity = std::max(arity, o.size());
    for (auto& o : objs) {
      bool ok = o.size() == arity;
      for (double v : o) ok = ok && std::isfinite(v);
      if (!ok) o.assign(arity, 0.0);
    }
    return objs;
  };
  std::vector<std::vector<double>> objs = score(pop);
  require(arity >= 2, Status::kInvalidArgument, "nsga: need at least 2 objectives");
  for (int gen = 1; gen <= cfg.iters; ++gen) {
    auto fronts = nondominated_sort(objs, false);
    std::vector<int> rank(pop.size());
    std::vector<double> crowd(pop.size());
    for (size_t r = 0; r < fronts.size(); ++r) {
      auto d = crowding(objs, fronts[r]);
      for (size_t k = 0; k < fronts[r].size(); ++k) {
        rank[fronts[r][k]] = static_cast<int>(r);
        crowd[fronts[r][k]] = d[k];
      }
    }
    Rng sel(cfg.seed, 1 + static_cast<uint64_t>(gen));
    auto better = [&](size_t i, size_t j) {
      if (rank[i] != rank[j]) return rank[i] < rank[j];
      if (crowd[i] != crowd[j]) return crowd[i] > crowd[j];
      return i < j;
    };
    auto tournament = [&]() {
      size_t i = static_cast<size_t>(sel.below(pop.size()));
      size_t j = static_cast<size_t>(sel.below(pop.size()));
      return better(j, i) ? j : i;
    };
    std::vector<Genome> children;
    for (int k = 0; static_cast<int>(children.size()) < cfg.pop; ++k) {
      const Genome& a = pop[tournament()];
      const Genome& c = pop[tournament()];
      const uint64_t s = pair_seed(cfg, gen, k);
      Offspring o = sbx(a, c, cfg.eta_c, derive_seed(s, 0));
      children.push_back(poly_mutate(o.a, cfg.eta_m, rate, derive_seed(s, 1)));
      if (static_cast<int>(children.size()) < cfg.pop)
        children.push_back(poly_mutate(o.b, cfg.eta_m, rate, derive_seed(s, 2)));
    }
    auto child_objs = score(children);
    std::vector<Genome> all = pop;
    all.insert(all.end(), children.begin(), children.end());
    std::vector<std::vector<double>> all_objs = objs;
    all_objs.insert(all_objs.end(), child_objs.begin(), child_objs.end());
    std::vector<size_t> keep;
    for (const auto& front : nondominated_sort(all_objs, false)) {
      if (keep.size() + front.size() <= static_cast<size_t>(cfg.pop)) {
        keep.insert(keep.end(), front.begin(), front.end());
        continue;
      }
      auto d = crowding(all_objs, front);
      std::vector<size_t> order(front.size());
      std::iota(order.begin(), order.end(), size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return d[a] > d[b]; });
      for (size_t k = 0; keep.size() < static_cast<size_t>(cfg.pop); ++k) keep.push_back(front[order[k]]);
      break;
    }
    std::vector<Genome> next;
    std::vector<std::vector<double>> next_objs;
    for (size_t i : keep) {
      next.push_back(all[i]);
      next_objs.push_back(all_objs[i]);
    }
    pop = std::move(next);
    objs = std::move(next_objs);
  }
  NsgaResult res;
  for (size_t i : pareto_front(objs, false)) {
    res.front.push_back(pop[i]);
    res.front_objectives.push_back(objs[i]);
  }
  res.population = pop;
  res.objectives = objs;
  return res;
}

std::vector<Genome> initial_genomes(MergeMethod m, size_t num_models) {
  Genome base = genome_for(MergeRecipe{m, {}, 0}, num_models);
  std::vector<Genome> out;
  const double uniform = 1.0 / static_cast<double>(num_models);
  switch (m) {
    case MergeMethod::kTaskArithmetic:
    case MergeMethod::kDareTa: {
      const size_t off = m == MergeMethod::kDareTa ? 1 : 0;
      if (off) base.genes[0] = 0.0;
      for (size_t j = 0; j < num_models; ++j) {
        Genome g = base;
        for (size_t k = 0; k < num_models; ++k) g.genes[off + k] = k == j ? 1.0 : 0.0;
        out.push_back(g);
      }
      Genome avg = base;
      for (size_t k = 0; k < num_models; ++k) avg.genes[off + k] = uniform;
      out.push_back(avg);
      break;
    }
    case MergeMethod::kSlerp:
      for (double t : {0.0, 1.0, 0.5}) {
        Genome g = base;
        g.genes[0] = t;
        out.push_back(g);
      }
      break;
    default:
      break;
  }
  return out;
}

MergeProblem build_problem(const WeightSet& theta_pre, const std::vector<WeightSet>& endpoints,
                           const std::vector<Dataset>& tasks, const Merge3Config& cfg) {
  require(!endpoints.empty() && !tasks.empty(), Status::kInvalidArgument,
          "merge3: need endpoints and tasks");
  for (const auto& e : endpoints) check_compatible(theta_pre, e);
  require(cfg.subset_size >= 1, Status::kInvalidArgument, "merge3: subset_size must be >= 1");
  MergeProblem p;
  p.theta_pre = theta_pre;
  p.endpoints = endpoints;
  p.tasks = tasks;
  p.method = cfg.method;
  p.estimator = cfg.estimator;
  p.aggregate = cfg.aggregate;
  p.seed = derive_seed(cfg.seed, 2);
  const size_t n = endpoints.size();
  std::vector<WeightSet> models = endpoints;
  for (int j = 0; j < cfg.probes; ++j) {
    Rng rng(cfg.seed, 200 + static_cast<uint64_t>(j));
    MergeRecipe r{MergeMethod::kTaskArithmetic, {}, 0};
    for (size_t k = 0; k < n; ++k) r.coeffs.push_back(rng.uniform());
    models.push_back(apply_recipe(r, theta_pre, endpoints));
  }
  std::vector<EndpointEstimate> calib;
  for (size_t t = 0; t < tasks.size(); ++t) {
    tasks[t].validate();
    const size_t N = tasks[t].size();
    p.subsets.push_back(extract(N, std::min(cfg.subset_size, N), derive_seed(cfg.seed, 100 + t)));
    Correctness Y(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(models.size()));
    for (size_t m = 0; m < models.size(); ++m)
      Y.col(static_cast<Eigen::Index>(m)) = correctness(models[m], tasks[t], all_rows(N));
    IrtFitConfig icfg;
    icfg.d = cfg.irt_dim;
    icfg.steps = cfg.irt_steps;
    icfg.seed = derive_seed(cfg.seed, 300 + t);
    IrtFit fit = fit_items(Y, icfg);
    TaskIrt ti{fit.items, Eigen::MatrixXd(static_cast<Eigen::Index>(n), cfg.irt_dim)};
    for (size_t e = 0; e < n; ++e)
      ti.endpoint_gammas.row(static_cast<Eigen::Index>(e)) =
          fit_ability(Y.col(static_cast<Eigen::Index>(e)), fit.items).gamma.transpose();
    for (size_t e = 0; e < n; ++e) {
      Eigen::VectorXi ys(static_cast<Eigen::Index>(p.subsets[t].size()));
      for (size_t r = 0; r < p.subsets[t].size(); ++r)
        ys[static_cast<Eigen::Index>(r)] = Y(static_cast<Eigen::Index>(p.subsets[t][r]), static_cast<Eigen::Index>(e));
      XiFit xi = fit_xi(ys, p.subsets[t], ti.endpoint_gammas, ti.items);
      calib.push_back({mean_of(Y.col(static_cast<Eigen::Index>(e))), mean_of(ys),
                       mp_irt(ys, p.subsets[t], xi.xi, ti.endpoint_gammas, ti.items)});
    }
    p.irt.push_back(std::move(ti));
  }
  p.c = cfg.c >= 0 ? cfg.c : fit_c_adaptive(calib);
  return p;
}

namespace {

std::vector<double> full_accuracy(const WeightSet& w, const std::vector<Dataset>& tasks) {
  std::vector<double> acc;
  for (const auto& d : tasks) acc.push_back(evaluate(w, d).accuracy);
  return acc;
}

}  // namespace

Merge3Report merge3_run(const WeightSet& theta_pre, const std::vector<WeightSet>& endpoints,
                        const std::vector<Dataset>& tasks, const Merge3Config& cfg) {
  MergeProblem p = build_problem(theta_pre, endpoints, tasks, cfg);
  Merge3Report rep;
  rep.c = p.c;
  rep.subsets = p.subsets;
  GaConfig ga = cfg.ga;
  ga.seed = derive_seed(cfg.seed, 1);
  Genome bounds = genome_for(MergeRecipe{cfg.method, {}, 0}, endpoints.size());
  std::vector<Genome> seeds = initial_genomes(cfg.method, endpoints.size());
  std::vector<Genome> final_pop;
  if (cfg.multi_objective) {
    rep.nsga = nsga_run(ga, bounds, [&](const Genome& g) {
      FitnessReport r = evaluate_candidate(g, p);
      if (r.quarantined) return std::vector<double>{};
      std::vector<double> o;
      for (const auto& t : r.tasks) o.push_back(t.chosen);
      return o;
    }, seeds);
    size_t best = 0;
    double best_fit = -1.0;
    for (size_t i = 0; i < rep.nsga.front.size(); ++i) {
      const double v = aggregate(rep.nsga.front_objectives[i], cfg.aggregate);
      if (v > best_fit) {
        best_fit = v;
        best = i;
      }
    }
    rep.best = rep.nsga.front[best];
    final_pop = rep.nsga.population;
  } else {
    rep.ga = ga_run(ga, bounds, [&](const Genome& g) {
      FitnessReport r = evaluate_candidate(g, p);
      if (r.quarantined) throw Error(Status::kRuntime, r.error);
      return r.fitness;
    }, seeds);
    rep.best = rep.ga.best;
    final_pop = rep.ga.populations.back();
  }
  rep.recipe = recipe_for(rep.best, cfg.method, p.seed);
  rep.estimate = evaluate_candidate(rep.best, p);
  rep.truth = full_accuracy(apply_recipe(rep.recipe, theta_pre, endpoints), tasks);
  for (const auto& e : endpoints) rep.endpoint_truth.push_back(full_accuracy(e, tasks));
  rep.average_truth = full_accuracy(weight_average(endpoints), tasks);
  for (const auto& g : final_pop)
    rep.final_truth.push_back(full_accuracy(apply_recipe(recipe_for(g, cfg.method, p.seed), theta_pre, endpoints), tasks));
  return rep;
}

nlohmann::json merge3_to_json(const Merge3Report& r) {
  nlohmann::json j;
  j["recipe"] = recipe_to_json(r.recipe);
  j["c"] = r.c;
  nlohmann::json est = nlohmann::json::array();
  for (const auto& t : r.estimate.tasks)
    est.push_back({{"observed_sub_acc", t.observed_sub_acc}, {"mp_irt", t.mp_irt},
                   {"gmp_irt", t.gmp_irt}, {"chosen", t.chosen}});
  j["estimate"] = {{"tasks", est}, {"fitness", r.estimate.fitness}};
  j["truth"] = r.truth;
  j["endpoint_truth"] = r.endpoint_truth;
  j["average_truth"] = r.average_truth;
  j["subsets"] = r.subsets;
  nlohmann::json gens = nlohmann::json::array();
  for (size_t g = 0; g < r.ga.populations.size(); ++g) {
    nlohmann::json genomes = nlohmann::json::array();
    for (const auto& ge : r.ga.populations[g]) genomes.push_back(ge.genes);
    nlohmann::json entry{{"gen", g}, {"genomes", genomes}, {"estimates", r.ga.fitness[g]}};
    if (g + 1 == r.ga.populations.size()) entry["truth"] = r.final_truth;
    gens.push_back(entry);
  }
  j["generations"] = gens;
  j["history"] = r.ga.history;
  nlohmann::json front = nlohmann::json::array();
  for (size_t i = 0; i < r.nsga.front.size(); ++i)
    front.push_back({{"genes", r.nsga.front[i].genes}, {"estimates", r.nsga.front_objectives[i]}});
  j["pareto_front"] = front;
  if (!r.nsga.population.empty()) j["truth_final_population"] = r.final_truth;
  j["evaluations"] = r.ga.evaluations;
  j["quarantined"] = r.ga.quarantined;
  return j;
}

Ntr negative_transfer_rate(const Eigen::MatrixXi& y_endpoints, const Eigen::VectorXi& y_merged) {
  require(y_endpoints.rows() == y_merged.size(), Status::kShapeMismatch,
          "negative_transfer_rate: item counts differ");
  long solvable = 0, negative = 0;
  for (Eigen::Index i = 0; i < y_merged.size(); ++i) {
    if ((y_endpoints.row(i).array() == 1).any()) {
      ++solvable;
      if (y_merged[i] == 0) ++negative;
    }
  }
  if (solvable == 0) return {0.0, true};
  return {static_cast<double>(negative) / static_cast<double>(solvable), false};
}

}  // namespace mergelab
