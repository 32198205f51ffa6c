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

#ifndef MERGELAB_TASKVEC_HPP_
#define MERGELAB_TASKVEC_HPP_

#include <optional>
#include <vector>

#include "mergelab/nnet.hpp"
#include "mergelab/weightspace.hpp"

namespace mergelab {

TaskVector task_vector(const WeightSet& theta_t, const WeightSet& theta_pre);

// theta_pre + lambda * sum(taus)
WeightSet task_arithmetic(const WeightSet& theta_pre,
                          const std::vector<TaskVector>& taus, double lambda);

// Full-batch GD with step alpha*eta on sum_t mean_loss_t.
std::vector<WeightSet> multitask_trajectory(const std::vector<Dataset>& tasks,
                                            const WeightSet& theta_pre,
                                            double alpha, double eta, int epochs);

// Gradient mismatch r_t(theta) = alpha * sum_t' grad_t'(theta) - grad_t(theta).
std::vector<TaskVector> mismatch(const std::vector<Dataset>& tasks,
                                 const WeightSet& theta, double alpha);

// Terms for the epoch-k gap theta_TA^(k) - theta_MT^(k) ~ eta^2 C.
// r = r_t(theta_MT^(0)), p = p_t^(k-2), s = s_t^(k-2), C = -alpha sum_t s_t^(k-2).
struct TheoryTerms {
  std::vector<TaskVector> r;
  std::vector<TaskVector> p;
  std::vector<TaskVector> s;
  TaskVector C;
  double alpha = 0.0;
  double eta = 0.0;
  int k = 0;
  bool trajectory_consistent = true;
};

TheoryTerms theory_terms(const std::vector<Dataset>& tasks,
                         const std::vector<WeightSet>& mt_trajectory,
                         double alpha, double eta, int k);

struct GapCheck {
  std::vector<double> etas;
  std::vector<double> gap_norms;
  std::vector<double> residual_norms;  // ||gap - eta^2 C||
  double slope_gap = 0.0;
  double slope_residual = 0.0;
  bool pass = false;
};

GapCheck second_order_gap_check(const std::vector<Dataset>& tasks,
                                const WeightSet& theta_pre, double alpha,
                                const std::vector<double>& etas, int k);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct CurvatureBound {
  double general = 0.0;
  std::optional<double> relu;
};

double activation_beta(Activation a);
double activation_gamma(Activation a);

CurvatureBound bound_C(const ArchSpec& arch, const std::vector<double>& s,
                       double M_x, int h, int T, double alpha);

struct AtmDelta {
  double loss_delta = 0.0;
  int n = 0;
};

struct AtmThreshold {
  double delta = 0.0;             // threshold as stated
  double delta_sufficient = 0.0;  // threshold the proof's inequalities support
  double pa_atm_delta = 0.0;      // unweighted mean of the task deltas
  double target_delta = 0.0;      // n-weighted mean
  bool hypothesis = false;        // pa_atm_delta > delta
  bool conclusion = false;        // target_delta > 0
  bool holds = true;              // hypothesis implies conclusion
  bool sufficient_holds = true;   // (pa_atm_delta > delta_sufficient) implies conclusion
};

AtmThreshold atm_delta_threshold(const std::vector<AtmDelta>& deltas);

struct GradientDiagnostics {
  std::vector<double> grad_norm_shares;  // per epoch, sums to 1
  std::vector<Cosine> cum_cosines;       // cos(tau_1, tau_k), k = 1..K
};

GradientDiagnostics gradient_diagnostics(const std::vector<WeightSet>& trajectory,
                                         const Dataset& d);

}  // namespace mergelab

#endif  // MERGELAB_TASKVEC_HPP_
