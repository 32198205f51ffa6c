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

#ifndef MERGELAB_NNET_HPP_
#define MERGELAB_NNET_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mergelab/weightspace.hpp"

namespace mergelab {

struct Dataset {
  Eigen::MatrixXd X;  // n x d_0, one sample per row
  std::vector<int> y;
  int num_classes = 0;
  std::string name;

  size_t size() const { return y.size(); }
  void validate() const;
  Dataset subset(const std::vector<size_t>& rows) const;
};

// Gaussian blobs. Class means are (separation / sqrt 2) * q_c for an
// orthonormal frame {q_c} drawn from `seed`, so every pair of means is
// `separation` apart (when classes > dims the frame falls back to random
// unit directions). Labels cycle 0..C-1. `split` picks an independent noise
// stream over the same frame, e.g. 0 for train and 1 for test.
struct DatasetSpec {
  int classes = 2;
  int dims = 2;
  int samples = 100;
  uint64_t seed = 0;
  double separation = 1.0;
  uint64_t split = 0;
  std::string name = "blobs";
};

Dataset make_dataset(const DatasetSpec& spec);

void save_csv(const Dataset& d, const std::string& path);
// num_classes <= 0 infers max label + 1.
Dataset load_csv(const std::string& path, int num_classes = 0);

WeightSet init_weights(const ArchSpec& arch, uint64_t seed);

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z);
Eigen::MatrixXd activate_grad(Activation a, const Eigen::MatrixXd& z);

// acts[0] = X, acts[l] = phi(pre[l]) for hidden l, acts[L] = logits.
// pre[0] is unused.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> acts;
};

Eigen::MatrixXd mlp_forward(const WeightSet& w, const Eigen::MatrixXd& X,
                            ForwardCache* cache = nullptr);
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct LossGrad {
  double loss = 0.0;
  TaskVector grad;
};

// Mean cross-entropy and its exact gradient.
LossGrad loss_and_grad(const WeightSet& w, const Dataset& d);
double mean_loss(const WeightSet& w, const Dataset& d);

using GradFn = std::function<TaskVector(const WeightSet&)>;

// Central difference of gradients, h = 1e-4 / (1 + |v|).
TaskVector hvp(const GradFn& grad, const WeightSet& w, const TaskVector& v);
TaskVector hvp(const WeightSet& w, const Dataset& d, const TaskVector& v);

enum class TrainMode { kFullBatchGd, kSgd };

struct TrainConfig {
  double eta = 0.1;
  int epochs = 1;
  TrainMode mode = TrainMode::kFullBatchGd;
  int batch_size = 32;
  uint64_t seed = 0;
  void validate() const;
};

struct TrainResult {
  std::vector<WeightSet> trajectory;  // theta^(0) .. theta^(epochs)
  bool diverged = false;
};

TrainResult train(const WeightSet& w0, const Dataset& d, const TrainConfig& cfg);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

std::vector<int> predict(const WeightSet& w, const Eigen::MatrixXd& X);
EvalResult evaluate(const WeightSet& w, const Dataset& d);
double normalized_accuracy(const std::vector<double>& merged,
                           const std::vector<double>& finetuned);

// Order in which loss_and_grad reduces rows: by label, then features.
std::vector<size_t> canonical_row_order(const Dataset& d);

}  // namespace mergelab

#endif  // MERGELAB_NNET_HPP_
