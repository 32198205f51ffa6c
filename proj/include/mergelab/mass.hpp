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

#ifndef MERGELAB_MASS_HPP_
#define MERGELAB_MASS_HPP_

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mergelab/nnet.hpp"
#include "mergelab/tsv.hpp"
#include "mergelab/weightspace.hpp"

namespace mergelab {

// Networks are split into a shared backbone (layers 1..L-1, every layer
// followed by the activation) and a per-task linear head (layer L).
struct RouterConfig {
  int layer = 0;  // backbone layer whose input feeds the router; 0 = last
  double eta = 0.2;
  int top_k = 3;
  double epsilon = 0.3;
  double temperature = 1.0;
  double alpha = 1.0;
  void validate() const;
};

struct ClassifierHead {
  Eigen::MatrixXd W;  // C x d
  Eigen::VectorXd b;  // C, or empty
  std::vector<std::string> classes;
  int num_classes() const { return static_cast<int>(W.rows()); }
};

WeightSet backbone_of(const WeightSet& w);
ClassifierHead head_of(const WeightSet& w);

// inputs[l - 1] is the input to backbone layer l; inputs[L] the features.
std::vector<Eigen::MatrixXd> backbone_inputs(const WeightSet& backbone, const Eigen::MatrixXd& X);
Eigen::MatrixXd head_logits(const ClassifierHead& h, const Eigen::MatrixXd& features);

std::vector<int> redundancy_filter(const std::vector<TaskVector>& deltas, double epsilon);

struct FixedMerge {
  WeightSet theta_mt;
  SvdBundle bundle;           // bundle task j is task accepted[j]
  std::vector<int> accepted;
};

FixedMerge fixed_merge(const WeightSet& theta_pre, const std::vector<TaskVector>& deltas,
                       const RouterConfig& cfg);

int routing_layer(const ArchSpec& backbone, const RouterConfig& cfg);

Eigen::VectorXd residuals(const Eigen::VectorXd& z, const SvdBundle& bundle, int layer);

struct Route {
  Eigen::VectorXd weights;
  std::vector<int> selected;  // ascending
};

Route route(const Eigen::VectorXd& r, const RouterConfig& cfg);

int map_route_check(const Eigen::VectorXd& z, const SvdBundle& bundle, int layer);

struct MassModel {
  WeightSet theta_pre;  // backbone
  FixedMerge merged;
  std::vector<ClassifierHead> heads;  // indexed by task id
  RouterConfig cfg;
};

MassModel build_mass(const WeightSet& pretrained, const std::vector<WeightSet>& experts,
                     const RouterConfig& cfg);

// theta_pre + alpha * sum of the selected bundle reconstructions.
WeightSet adaptive_backbone(const MassModel& m, const std::vector<int>& selected);

struct MassPrediction {
  int cls = -1;
  int head = -1;              // task id
  std::vector<int> selected;  // task ids
  Eigen::VectorXd residuals;  // per accepted task
  Eigen::VectorXd weights;
};

MassPrediction adaptive_infer(const Eigen::VectorXd& x, const MassModel& m);
// One routing decision per batch from the mean residuals.
std::vector<MassPrediction> adaptive_infer_batch(const Eigen::MatrixXd& X, const MassModel& m);

// Fraction of rows whose minimum-residual task is the true task.
double routing_accuracy(const MassModel& m, const std::vector<Dataset>& tasks, int layer);

struct SweepRow {
  int layer = 0;
  double accuracy = 0.0;
};

std::vector<SweepRow> routing_sweep(const MassModel& m, const std::vector<Dataset>& tasks);

nlohmann::json prediction_to_json(const MassPrediction& p, const MassModel& m);

}  // namespace mergelab

#endif  // MERGELAB_MASS_HPP_
