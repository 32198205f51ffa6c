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

#ifndef MERGELAB_ALIGN_HPP_
#define MERGELAB_ALIGN_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "mergelab/nnet.hpp"
#include "mergelab/weightspace.hpp"

namespace mergelab {

// perm[i] = j means row i is assigned to column j.
using Perm = std::vector<int>;

Eigen::MatrixXd perm_matrix(const Perm& p);
Perm perm_from_matrix(const Eigen::MatrixXd& P);  // requires a hard matrix
Perm inverse(const Perm& p);

// Maximizes sum_i score(i, perm[i]). Among optimal assignments returns the
// lexicographically smallest perm vector.
Perm lap_max(const Eigen::MatrixXd& score, double* value = nullptr);

// P_1 .. P_{L-1}; P_0 and P_L are the identity and never stored.
struct PermSet {
  std::vector<Eigen::MatrixXd> P;
};

PermSet identity_perms(const ArchSpec& arch);
PermSet transpose(const PermSet& p);
PermSet compose(const PermSet& a, const PermSet& b);  // a * b per layer
bool is_hard(const PermSet& p, double tol = 0.0);
bool is_doubly_stochastic(const PermSet& p, double tol = 1e-9);
bool is_identity(const PermSet& p);
PermSet harden(const PermSet& p);

// W'_l = P_l W_l P_{l-1}^T, b'_l = P_l b_l. Rejects soft maps.
WeightSet apply_perm(const WeightSet& w, const PermSet& p);
// Same transform for relaxed (doubly stochastic) maps.
WeightSet apply_soft_perm(const WeightSet& w, const PermSet& p);

struct FwOptions {
  double tol = 1e-6;  // relative change in objective
  int max_iter = 200;
};

// sum_l <[W_l^A | b_l^A], [P_l W_l^B P_{l-1}^T | P_l b_l^B]>
double pairwise_objective(const WeightSet& A, const WeightSet& B,
                          const PermSet& p);
std::vector<Eigen::MatrixXd> pairwise_gradient(const WeightSet& A,
                                               const WeightSet& B,
                                               const PermSet& p);

struct FwResult {
  PermSet perms;              // hardened; apply_perm(B, perms) is aligned to A
  std::vector<double> trace;  // relaxed objective per iterate, starting at init
  double final_objective = 0.0;  // after hardening
  int iterations = 0;
};

FwResult fw_pairwise(const WeightSet& A, const WeightSet& B,
                     const FwOptions& opt = {});

// Model p is mapped to the universe by apply_perm(theta_p, P^p^T); the map
// from model q into model p's frame is P^p P^q^T.
struct UniverseMaps {
  std::vector<PermSet> maps;
  PermSet pairwise(size_t p, size_t q) const;
};

// sum_{p != q} sum_l <P_l^p^T W_l^p P_{l-1}^p, P_l^q^T W_l^q P_{l-1}^q>
double multi_objective(const std::vector<WeightSet>& models,
                       const std::vector<PermSet>& maps);
// Gradient with respect to every P_l^a of model a.
std::vector<Eigen::MatrixXd> multi_gradient(const std::vector<WeightSet>& models,
                                            const std::vector<PermSet>& maps,
                                            size_t a);

struct FwMultiResult {
  UniverseMaps maps;
  std::vector<double> trace;
  double final_objective = 0.0;
  int iterations = 0;
};

FwMultiResult fw_multi(const std::vector<WeightSet>& models,
                       const FwOptions& opt = {});

WeightSet map_to_universe(const WeightSet& model, const PermSet& map);

// pair(p, q) returns the map taking model q into model p's frame.
using PairwiseMapFn = std::function<PermSet(size_t p, size_t q)>;

// cycle = (c_0, c_1, ..., c_m = c_0). Model c_0 is pushed through every hop
// and compared with itself (flattened l2 distance).
double cycle_error(const PairwiseMapFn& pair,
                   const std::vector<WeightSet>& models,
                   const std::vector<size_t>& cycle);
double cycle_error(const UniverseMaps& maps,
                   const std::vector<WeightSet>& models,
                   const std::vector<size_t>& cycle);

WeightSet c2m3_merge(const std::vector<WeightSet>& models,
                     const FwOptions& opt = {});

struct MergeManyResult {
  WeightSet merged;
  int rounds = 0;
  bool converged = false;
};
MergeManyResult merge_many(const std::vector<WeightSet>& models, int max_rounds,
                           uint64_t seed, const FwOptions& opt = {});

PermSet activation_matching(const WeightSet& A, const WeightSet& B,
                            const Dataset& probe);

struct RepairResult {
  WeightSet weights;
  // (layer, neuron) pairs whose scale was left at 1.
  std::vector<std::pair<int, int>> flagged;
};

// Per hidden layer, in order: rescale rows of W_l and shift b_l so the
// merged pre-activation mean/std on the probe equal the weighted mix of the
// endpoint statistics.
RepairResult repair(const WeightSet& merged,
                    const std::vector<WeightSet>& endpoints,
                    const std::vector<double>& weights, const Dataset& probe);

struct BarrierPoint {
  double lambda = 0.0, loss = 0.0, accuracy = 0.0;
};
struct BarrierResult {
  double barrier = 0.0;
  std::vector<BarrierPoint> curve;
};

// Interpolates theta_A + lambda (theta_B - theta_A) on a uniform grid.
BarrierResult loss_barrier(const WeightSet& A, const WeightSet& B,
                           const Dataset& d, int grid_points);

}  // namespace mergelab

#endif  // MERGELAB_ALIGN_HPP_
