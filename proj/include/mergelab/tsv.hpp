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

#ifndef MERGELAB_TSV_HPP_
#define MERGELAB_TSV_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mergelab/weightspace.hpp"

namespace mergelab {

struct LayerSvd {
  Eigen::MatrixXd U;  // rows x k
  Eigen::VectorXd S;  // k, descending
  Eigen::MatrixXd V;  // cols x k
  int rank() const { return static_cast<int>(S.size()); }
};

// Thin SVD; sigma < 1e-12 * sigma_max set to 0; each column of U has its
// largest-magnitude entry positive (ties: earliest index).
LayerSvd layer_svd(const Eigen::MatrixXd& delta);
LayerSvd truncate(const LayerSvd& s, int k);
Eigen::MatrixXd reconstruct(const LayerSvd& s);

// Per-layer, per-task triples. layers[l][t]; biases[t][l] (empty if no bias).
struct SvdBundle {
  ArchSpec arch;
  std::vector<int> ranks;
  std::vector<std::vector<LayerSvd>> layers;
  std::vector<std::vector<Eigen::VectorXd>> biases;
  int num_tasks() const { return layers.empty() ? 0 : static_cast<int>(layers[0].size()); }
};

SvdBundle svd_bundle(const std::vector<TaskVector>& taus);
SvdBundle truncate(const SvdBundle& b, int k);
SvdBundle truncate(const SvdBundle& b, const std::vector<int>& ks);
TaskVector reconstruct(const SvdBundle& b, int task_id);
size_t stored_params(const SvdBundle& b);

MwsFile bundle_to_mws(const SvdBundle& b);
SvdBundle bundle_from_mws(const MwsFile& f);

Eigen::MatrixXd procrustes(const Eigen::MatrixXd& X);
Eigen::MatrixXd whiten(const Eigen::MatrixXd& X);

struct StiReport {
  std::vector<double> per_layer;
  double total = 0.0;
};

double sti_layer(const std::vector<Eigen::MatrixXd>& deltas, int k);
StiReport sti(const std::vector<TaskVector>& taus, int k);

// Rank kept per layer by TSV-Merge: max(1, floor(min(d_l, d_{l-1}) / T)).
std::vector<int> tsv_ranks(const ArchSpec& arch, int T);

struct TsvVariant {
  bool low_rank = true;
  bool orthogonalize = true;
};

WeightSet tsv_merge(const WeightSet& theta_pre, const std::vector<TaskVector>& taus,
                    double alpha = 1.0, TsvVariant variant = {});

SvdBundle tsv_compress(const TaskVector& tau, int k);
SvdBundle tsv_compress(const TaskVector& tau, const std::vector<int>& ks);

struct StorageReport {
  size_t params_nn = 0;
  size_t params_tsv = 0;
  std::vector<double> k_bound;  // dm / (d + m + 1) per layer
  bool compresses = false;
};

StorageReport storage_params(const ArchSpec& arch, int k_prime);
StorageReport storage_params(const ArchSpec& arch, const std::vector<int>& k_prime);

struct ProcrustesCompare {
  std::vector<double> full_errors;
  std::vector<double> trunc_errors;
  bool hypothesis = false;  // k <= n (T - 2 sqrt T) / T
  int holds = 0;            // trials with full >= trunc
  bool theorem_holds = false;
};

double procrustes_k_bound(int T, int n);

ProcrustesCompare procrustes_error_compare(int T, int n, int k, int trials,
                                           uint64_t seed, bool enforce_hypothesis = true);

// ||U - X||_F for T copies of one orthogonal n x n matrix.
double procrustes_equal_error(int T, int n, uint64_t seed);

}  // namespace mergelab

#endif  // MERGELAB_TSV_HPP_
