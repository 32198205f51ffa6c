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

#ifndef MERGELAB_IRT_HPP_
#define MERGELAB_IRT_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace mergelab {

// Multidimensional 2PL: P(Y_im = 1) = sigmoid(a_i . gamma_m - beta_i).
struct ItemParams {
  Eigen::MatrixXd a;     // items x d
  Eigen::VectorXd beta;  // items
  int num_items() const { return static_cast<int>(beta.size()); }
  int dim() const { return static_cast<int>(a.cols()); }
  void validate() const;
};

using Correctness = Eigen::MatrixXi;  // items x models, entries 0/1

double irt_prob(const Eigen::VectorXd& gamma, const Eigen::VectorXd& a, double beta);
Eigen::VectorXd irt_probs(const ItemParams& items, const Eigen::VectorXd& gamma);

struct IrtFitConfig {
  int d = 15;
  double prior_precision = 1.0;
  int steps = 500;
  double lr = 0.05;
  uint64_t seed = 0;
  double a_cap = std::numeric_limits<double>::infinity();
};

struct IrtFit {
  ItemParams items;
  Eigen::MatrixXd gammas;  // models x d
  double log_posterior = 0.0;
  std::vector<double> trace;
};

IrtFit fit_items(const Correctness& Y, const IrtFitConfig& cfg);

struct AbilityFit {
  Eigen::VectorXd gamma;
  double log_posterior = 0.0;
  bool flat = false;  // items carry no information; gamma is the prior mean
};

AbilityFit fit_ability(const Eigen::VectorXi& y, const ItemParams& items,
                       double prior_precision = 1.0, int steps = 100);

struct XiFit {
  Eigen::VectorXd xi;
  double log_likelihood = 0.0;
  bool flat = false;  // likelihood constant in xi; xi left at 1/n
};

// Maximizes the likelihood of y_sub on items `rows` over xi in [0, 1]^n,
// with ability gammas^T xi (gammas: endpoints x d).
XiFit fit_xi(const Eigen::VectorXi& y_sub, const std::vector<size_t>& rows,
             const Eigen::MatrixXd& gammas, const ItemParams& items, int steps = 2000);

double xi_log_likelihood(const Eigen::VectorXi& y_sub, const std::vector<size_t>& rows,
                         const Eigen::MatrixXd& gammas, const ItemParams& items,
                         const Eigen::VectorXd& xi);

// tau/|Dbar| sum Y + (1 - tau)/|D \ Dbar| sum p, tau = |Dbar|/|D|.
double mp_irt_formula(double sum_observed, size_t n_sub, double sum_predicted, size_t n_total);

double mp_irt(const Eigen::VectorXi& y_sub, const std::vector<size_t>& rows,
              const Eigen::VectorXd& xi, const Eigen::MatrixXd& gammas, const ItemParams& items);

double gmp_irt(const Eigen::VectorXi& y_sub, double mp_estimate, double c);

struct EndpointEstimate {
  double truth = 0.0;     // full-dataset accuracy
  double observed = 0.0;  // subset accuracy
  double mp = 0.0;        // mp_irt estimate
};

// Mean over endpoints of argmin_c |c obs + (1 - c) mp - truth| on a grid.
double fit_c_adaptive(const std::vector<EndpointEstimate>& endpoints, int grid_points = 101);

struct StabilityReport {
  double eps_hat = 0.0;   // max over theta of the mean |F(D) - F(Dbar_s)|
  double gap = 0.0;       // |m* - mean_s m_hat_s|
  double m_star = 0.0;
  double mean_m_hat = 0.0;
  std::vector<double> eps_s;          // per subset, max over theta
  std::vector<double> optimality_gap; // F(theta_hat_s; D) - F(theta*; D)
  bool optimality_holds = false;      // gap_s <= 2 eps_s for every subset
  bool expectation_holds = false;     // gap <= eps_hat
  bool bound_holds = false;
};

// F(theta, rows) over theta = 0..num_theta-1; rows are sorted item indices.
using SubsetFitness = std::function<double(int theta, const std::vector<size_t>& rows)>;

StabilityReport stability_harness(const SubsetFitness& F, int num_theta, size_t dataset_size,
                                  size_t subset_size, int num_subsets, uint64_t seed);
StabilityReport stability_on_subsets(const SubsetFitness& F, int num_theta, size_t dataset_size,
                                     const std::vector<std::vector<size_t>>& subsets);

std::vector<size_t> uniform_subset(size_t n, size_t k, uint64_t seed);

struct UnbiasednessConfig {
  std::vector<size_t> sizes{10, 20, 50, 100};
  size_t dataset_size = 200;
  int trials = 100;
  int d = 15;
  int endpoints = 2;
  uint64_t seed = 0;
};

struct UnbiasednessCurve {
  std::vector<size_t> sizes;
  std::vector<double> mean_abs_error;
  int inversions = 0;          // adjacent increases
  double max_inversion = 0.0;  // largest adjacent increase
};

UnbiasednessCurve unbiasedness_sim(const UnbiasednessConfig& cfg);

double rank_correlation(const std::vector<double>& x, const std::vector<double>& y);

struct IrtModel {
  ItemParams items;
  std::map<std::string, Eigen::VectorXd> gammas;
};

nlohmann::json irt_to_json(const IrtModel& m);
IrtModel irt_from_json(const nlohmann::json& j);

}  // namespace mergelab

#endif  // MERGELAB_IRT_HPP_
