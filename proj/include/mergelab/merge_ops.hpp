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

#ifndef MERGELAB_MERGE_OPS_HPP_
#define MERGELAB_MERGE_OPS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mergelab/weightspace.hpp"

namespace mergelab {

WeightSet weight_average(const std::vector<WeightSet>& models);

struct SlerpResult {
  WeightSet weights;
  bool linear_fallback = false;
};
SlerpResult slerp(const WeightSet& a, const WeightSet& b, double t);

// Keeps the ceil(frac * P) largest magnitudes; ties broken by lower index.
std::vector<char> top_k_mask(const Eigen::VectorXd& v, double frac);

WeightSet ties_merge(const WeightSet& theta_pre, const std::vector<TaskVector>& taus,
                     double trim_frac, double lambda);

TaskVector dare(const TaskVector& tau, double p, uint64_t seed);

enum class MergeMethod { kAverage, kTaskArithmetic, kSlerp, kTies, kDareTa, kDareTies };

const char* merge_method_name(MergeMethod m);
MergeMethod parse_merge_method(const std::string& s);

// coeffs layout per method:
//   average:          []
//   task_arithmetic:  [lambda_1 .. lambda_T]
//   slerp:            [t]
//   ties:             [trim_frac, lambda]
//   dare_ta:          [p, lambda_1 .. lambda_T]
//   dare_ties:        [p, trim_frac, lambda]
struct MergeRecipe {
  MergeMethod method = MergeMethod::kAverage;
  std::vector<double> coeffs;
  uint64_t seed = 0;

  void validate(size_t num_models) const;
};

bool is_stochastic(MergeMethod m);
size_t recipe_arity(MergeMethod m, size_t num_models);
void recipe_bounds(MergeMethod m, size_t num_models, std::vector<double>& lo,
                   std::vector<double>& hi);

nlohmann::json recipe_to_json(const MergeRecipe& r);
MergeRecipe recipe_from_json(const nlohmann::json& j);

WeightSet apply_recipe(const MergeRecipe& recipe, const WeightSet& theta_pre,
                       const std::vector<WeightSet>& models);

}  // namespace mergelab

#endif  // MERGELAB_MERGE_OPS_HPP_
