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

#include "mergelab/taskvec.hpp"

#include <algorithm>
#include <cmath>

#include "mergelab/error.hpp"

namespace mergelab {

TaskVector task_vector(const WeightSet& theta_t, const WeightSet& theta_pre) {
  return theta_t - theta_pre;
}

WeightSet task_arithmetic(const WeightSet& theta_pre,
                          const std::vector<TaskVector>& taus, double lambda) {
  require(!taus.empty(), Status::kInvalidArgument,
          "task_arithmetic: no task vectors");
  TaskVector sum = taus[0];
  for (size_t i = 1; i < taus.size(); ++i) sum += taus[i];
  return theta_pre + lambda * sum;
}

namespace {

void check_tasks(const std::vector<Dataset>& tasks, const WeightSet& w) {
  require(!tasks.empty(), Status::kInvalidArgument, "no tasks given");
  for (const auto& t : tasks) {
    t.validate();
    require(t.X.cols() == w.arch.input_dim(), Status::kShapeMismatch,
            "task input dim does not match arch");
  }
}

TaskVector summed_grad(const std::vector<Dataset>& tasks, const WeightSet& w) {
  TaskVector g = loss_and_grad(w, tasks[0]).grad;
  for (size_t t = 1; t < tasks.size(); ++t) g += loss_and_grad(w, tasks[t]).grad;
  return g;
}

}  // namespace

std::vector<WeightSet> multitask_trajectory(const std::vector<Dataset>& tasks,
                                            const WeightSet& theta_pre,
                                            double alpha, double eta, int epochs) {
  check_tasks(tasks, theta_pre);
  require(epochs >= 0, Status::kInvalidArgument, "epochs must be >= 0");
  std::vector<WeightSet> traj{theta_pre};
  for (int e = 0; e < epochs; ++e) {
    WeightSet next = traj.back() - (alpha * eta) * summed_grad(tasks, traj.back());
    if (!all_finite(next)) fail(Status::kDiverged, "multi-task training diverged");
    traj.push_back(std::move(next));
  }
  return traj;
}

std::vector<TaskVector> mismatch(const std::vector<Dataset>& tasks,
                                 const WeightSet& theta, double alpha) {
  check_tasks(tasks, theta);
  std::vector<TaskVector> g;
  for (const auto& t : tasks) g.push_back(loss_and_grad(theta, t).grad);
  TaskVector sum = g[0];
  for (size_t t = 1; t < g.size(); ++t) sum += g[t];
  std::vector<TaskVector> r;
  for (const auto& gt : g) r.push_back(alpha * sum - gt);
  return r;
}

TheoryTerms theory_terms(const std::vector<Dataset>& tasks,
                         const std::vector<WeightSet>& mt_trajectory,
                         double alpha, double eta, int k) {
  require(k >= 1, Status::kInvalidArgument, "theory_terms: k must be >= 1");
  require(static_cast<int>(mt_trajectory.size()) >= k, Status::kInvalidArgument,
          "theory_terms: trajectory shorter than k");
  const WeightSet& theta0 = mt_trajectory[0];
  check_tasks(tasks, theta0);
  const size_t T = tasks.size();

  TheoryTerms out;
  out.alpha = alpha;
  out.eta = eta;
  out.k = k;
  if (mt_trajectory.size() >= 2) {
    WeightSet expect = theta0 - (alpha * eta) * summed_grad(tasks, theta0);
    double scale = 1.0 + max_abs(theta0);
    out.trajectory_consistent = max_abs(expect - mt_trajectory[1]) <= 1e-10 * scale;
  }

  out.r = mismatch(tasks, theta0, alpha);
  WeightSet zero = WeightSet::zeros(theta0.arch);
  out.p.assign(T, zero);
  out.s.assign(T, zero);
  out.C = zero;
  if (k < 2) return out;

  // p_t^j accumulates r_t(theta^(m)) for m <= j; s_t^j adds H_t(theta^(j+1)) p_t^j.
  std::vector<TaskVector> p(T, zero), s(T, zero);
  for (int j = 0; j <= k - 2; ++j) {
    std::vector<TaskVector> r = j == 0 ? out.r : mismatch(tasks, mt_trajectory[j], alpha);
    for (size_t t = 0; t < T; ++t) {
      p[t] += r[t];
      s[t] += hvp(mt_trajectory[static_cast<size_t>(j) + 1], tasks[t], p[t]);
    }
  }
  out.p = p;
  out.s = s;
  for (size_t t = 0; t < T; ++t) out.C -= alpha * s[t];
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, Status::kInvalidArgument,
          "loglog_slope: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, Status::kNumerical,
            "loglog_slope: non-positive value");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

GapCheck second_order_gap_check(const std::vector<Dataset>& tasks,
                                const WeightSet& theta_pre, double alpha,
                                const std::vector<double>& etas, int k) {
  check_tasks(tasks, theta_pre);
  require(k >= 1, Status::kInvalidArgument, "gap check: k must be >= 1");
  require(etas.size() >= 3, Status::kInvalidArgument,
          "gap check: need at least 3 step sizes");
  for (size_t i = 0; i < etas.size(); ++i) {
    require(etas[i] > 0, Status::kInvalidArgument, "gap check: eta must be > 0");
    if (i) require(etas[i] < etas[i - 1], Status::kInvalidArgument,
                   "gap check: etas must be strictly decreasing");
  }
  GapCheck out;
  out.etas = etas;
  for (double eta : etas) {
    TrainConfig cfg;
    cfg.eta = eta;
    cfg.epochs = k;
    cfg.mode = TrainMode::kFullBatchGd;
    std::vector<TaskVector> taus;
    for (const auto& t : tasks) {
      TrainResult tr = train(theta_pre, t, cfg);
      if (tr.diverged) fail(Status::kDiverged, "gap check: task training diverged");
      taus.push_back(task_vector(tr.trajectory.back(), theta_pre));
    }
    WeightSet ta = task_arithmetic(theta_pre, taus, alpha);
    std::vector<WeightSet> mt = multitask_trajectory(tasks, theta_pre, alpha, eta, k);
    TaskVector gap = ta - mt.back();
    TheoryTerms terms = theory_terms(tasks, mt, alpha, eta, k);
    out.gap_norms.push_back(norm2(gap));
    out.residual_norms.push_back(norm2(gap - (eta * eta) * terms.C));
  }
  if (k >= 2) {
    out.slope_gap = loglog_slope(out.etas, out.gap_norms);
    out.slope_residual = loglog_slope(out.etas, out.residual_norms);
    out.pass = out.slope_gap >= 1.7 && out.slope_gap <= 2.3 &&
               out.slope_residual >= 2.5 && out.slope_residual <= 3.5;
  } else {
    double scale = 1.0 + max_abs(theta_pre);
    out.pass = std::all_of(out.gap_norms.begin(), out.gap_norms.end(),
                           [&](double g) { return g <= 1e-12 * scale; });
  }
  return out;
}

double activation_beta(Activation a) {
  switch (a) {
    case Activation::kRelu: return 1.0;
    case Activation::kSigmoid: return 0.25;
    case Activation::kTanh: return 1.0;
  }
  return 1.0;
}

double activation_gamma(Activation a) {
  switch (a) {
    case Activation::kRelu: return 0.0;
    case Activation::kSigmoid: return 1.0 / (6.0 * std::sqrt(3.0));
    case Activation::kTanh: return 4.0 / (3.0 * std::sqrt(3.0));
  }
  return 0.0;
}

CurvatureBound bound_C(const ArchSpec& arch, const std::vector<double>& s,
                       double M_x, int h, int T, double alpha) {
  arch.validate();
  const int L = arch.num_layers();
  require(static_cast<int>(s.size()) == L, Status::kInvalidArgument,
          "bound_C: need one spectral norm per layer");
  require(M_x > 0, Status::kInvalidArgument, "bound_C: M_x must be > 0");
  require(h >= 0 && T >= 1, Status::kInvalidArgument, "bound_C: need h >= 0, T >= 1");
  double pi = 1.0;
  for (double sl : s) {
    require(sl > 0, Status::kInvalidArgument, "bound_C: s_l must be > 0");
    pi *= sl;
  }
  const double beta = activation_beta(arch.activation);
  const double gamma = activation_gamma(arch.activation);
  const double task = T * (h + 1.0) * (h + 2.0) / 2.0 * std::abs(alpha * T - 1.0);
  const double H = 2.0 * gamma * M_x * M_x * pi * pi * std::pow(beta, 2 * L - 2);
  const double G = std::sqrt(2.0) * M_x * pi * std::pow(beta, L - 1);
  CurvatureBound out;
  out.general = task * H * G;
  if (arch.activation == Activation::kRelu) {
    const double H_relu = 0.5 * std::sqrt(2.0) * std::pow(M_x * pi, 3);
    const double G_relu = std::sqrt(2.0) * M_x * pi;
    out.relu = 0.5 * task * H_relu * G_relu;
  }
  return out;
}

AtmThreshold atm_delta_threshold(const std::vector<AtmDelta>& deltas) {
  require(!deltas.empty(), Status::kInvalidArgument, "atm: no tasks");
  int min_inc = 0, max_inc = 0, min_dec = 0, max_dec = 0;
  bool any_inc = false, any_dec = false;
  double inc_sum = 0.0, mean = 0.0, weighted = 0.0, total = 0.0;
  for (const auto& d : deltas) {
    require(d.n > 0, Status::kInvalidArgument, "atm: dataset size must be > 0");
    if (d.loss_delta > 0) {
      min_dec = any_dec ? std::min(min_dec, d.n) : d.n;
      max_dec = any_dec ? std::max(max_dec, d.n) : d.n;
      any_dec = true;
    } else {
      min_inc = any_inc ? std::min(min_inc, d.n) : d.n;
      max_inc = any_inc ? std::max(max_inc, d.n) : d.n;
      any_inc = true;
      inc_sum += std::abs(d.loss_delta);
    }
    mean += d.loss_delta;
    weighted += d.n * d.loss_delta;
    total += d.n;
  }
  require(!(any_inc && !any_dec), Status::kInvalidArgument,
          "atm: threshold undefined when no task loss decreases");
  const double T = static_cast<double>(deltas.size());
  AtmThreshold out;
  if (any_inc) {
    out.delta = (1.0 / T) * (1.0 - static_cast<double>(min_inc) / max_dec) * inc_sum;
    out.delta_sufficient =
        std::max(0.0, (1.0 / T) * (static_cast<double>(max_inc) / min_dec - 1.0) * inc_sum);
  }
  out.pa_atm_delta = mean / T;
  out.target_delta = weighted / total;
  out.hypothesis = out.pa_atm_delta > out.delta;
  out.conclusion = out.target_delta > 0;
  out.holds = !out.hypothesis || out.conclusion;
  out.sufficient_holds = !(out.pa_atm_delta > out.delta_sufficient) || out.conclusion;
  return out;
}

GradientDiagnostics gradient_diagnostics(const std::vector<WeightSet>& trajectory,
                                         const Dataset& d) {
  require(trajectory.size() >= 2, Status::kInvalidArgument,
          "gradient_diagnostics: trajectory needs >= 2 points");
  GradientDiagnostics out;
  std::vector<double> norms;
  for (size_t k = 0; k + 1 < trajectory.size(); ++k)
    norms.push_back(norm2(loss_and_grad(trajectory[k], d).grad));
  double total = 0.0;
  for (double n : norms) total += n;
  for (double n : norms) out.grad_norm_shares.push_back(total > 0 ? n / total : 0.0);
  TaskVector tau1 = trajectory[1] - trajectory[0];
  for (size_t k = 1; k < trajectory.size(); ++k)
    out.cum_cosines.push_back(cosine_sim(tau1, trajectory[k] - trajectory[0]));
  return out;
}

}  // namespace mergelab
