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

#ifndef MERGELAB_EVOLVE_HPP_
#define MERGELAB_EVOLVE_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mergelab/irt.hpp"
#include "mergelab/merge_ops.hpp"
#include "mergelab/nnet.hpp"

namespace mergelab {

struct Genome {
  std::vector<double> genes;
  std::vector<double> lo, hi;
  void validate() const;
};

Genome genome_for(const MergeRecipe& r, size_t num_models);
MergeRecipe recipe_for(const Genome& g, MergeMethod method, uint64_t seed);

std::vector<size_t> extract(size_t dataset_size, size_t k, uint64_t seed);

struct Offspring {
  Genome a, b;
};

Offspring sbx(const Genome& pa, const Genome& pb, double eta_c, uint64_t seed);
Genome poly_mutate(const Genome& g, double eta_m, double rate, uint64_t seed);

enum class Estimator { kObserved, kMpIrt, kGmpIrt };
const char* estimator_name(Estimator e);
Estimator parse_estimator(const std::string& s);

enum class Aggregate { kMin, kMean };

struct TaskIrt {
  ItemParams items;
  Eigen::MatrixXd endpoint_gammas;  // endpoints x d
};

struct MergeProblem {
  WeightSet theta_pre;
  std::vector<WeightSet> endpoints;
  std::vector<Dataset> tasks;                  // full D per task
  std::vector<std::vector<size_t>> subsets;    // Dbar per task
  std::vector<TaskIrt> irt;                    // per task
  MergeMethod method = MergeMethod::kTaskArithmetic;
  Estimator estimator = Estimator::kGmpIrt;
  double c = 0.5;
  Aggregate aggregate = Aggregate::kMin;
  uint64_t seed = 0;
};

struct TaskFitness {
  double observed_sub_acc = 0.0;
  double mp_irt = 0.0;
  double gmp_irt = 0.0;
  double chosen = 0.0;
};

struct FitnessReport {
  std::vector<TaskFitness> tasks;
  double fitness = 0.0;  // aggregate of chosen
  bool quarantined = false;
  std::string error;
  int evaluation_count = 0;
};

Eigen::VectorXi correctness(const WeightSet& w, const Dataset& d, const std::vector<size_t>& rows);

FitnessReport evaluate_candidate(const Genome& g, const MergeProblem& p);

struct GaConfig {
  int pop = 25;
  int iters = 7;
  uint64_t seed = 0;
  double eta_c = 15.0;
  double eta_m = 20.0;
  double mutation_rate = -1.0;  // < 0: 1 / genome length
  int threads = 1;
};

using FitnessFn = std::function<double(const Genome&)>;
using ObjectivesFn = std::function<std::vector<double>(const Genome&)>;

struct GaResult {
  Genome best;
  double best_fitness = 0.0;
  std::vector<double> history;  // best fitness after each generation, gen 0 = initial
  std::vector<std::vector<Genome>> populations;
  std::vector<std::vector<double>> fitness;
  int evaluations = 0;
  int quarantined = 0;
};

// Maximizes fitness. `seeds` are placed first in the initial population.
GaResult ga_run(const GaConfig& cfg, const Genome& bounds, const FitnessFn& f,
                const std::vector<Genome>& seeds = {});

// Indices of non-dominated points; minimize selects the direction.
std::vector<size_t> pareto_front(const std::vector<std::vector<double>>& points, bool minimize);

struct NsgaResult {
  std::vector<Genome> front;
  std::vector<std::vector<double>> front_objectives;
  std::vector<Genome> population;
  std::vector<std::vector<double>> objectives;
};

// Maximizes every objective.
NsgaResult nsga_run(const GaConfig& cfg, const Genome& bounds, const ObjectivesFn& f,
                    const std::vector<Genome>& seeds = {});

std::vector<Genome> initial_genomes(MergeMethod m, size_t num_models);

struct Merge3Config {
  GaConfig ga;
  MergeMethod method = MergeMethod::kTaskArithmetic;
  Estimator estimator = Estimator::kGmpIrt;
  double c = -1.0;  // < 0: fit c on the endpoints
  size_t subset_size = 20;
  int irt_dim = 15;
  int probes = 8;
  int irt_steps = 500;
  bool multi_objective = false;
  Aggregate aggregate = Aggregate::kMin;
  uint64_t seed = 0;
};

struct Merge3Report {
  Genome best;
  MergeRecipe recipe;
  FitnessReport estimate;
  std::vector<double> truth;         // full-D accuracy per task
  std::vector<std::vector<double>> endpoint_truth;  // endpoint x task
  std::vector<double> average_truth;
  std::vector<std::vector<double>> final_truth;  // final population x task
  double c = 0.5;
  GaResult ga;
  NsgaResult nsga;
  std::vector<std::vector<size_t>> subsets;
};

MergeProblem build_problem(const WeightSet& theta_pre, const std::vector<WeightSet>& endpoints,
                           const std::vector<Dataset>& tasks, const Merge3Config& cfg);

Merge3Report merge3_run(const WeightSet& theta_pre, const std::vector<WeightSet>& endpoints,
                        const std::vector<Dataset>& tasks, const Merge3Config& cfg);

nlohmann::json merge3_to_json(const Merge3Report& r);

struct Ntr {
  double value = 0.0;
  bool undefined = false;  // no item solvable by any endpoint
};

// Y_endpoints: items x endpoints.
Ntr negative_transfer_rate(const Eigen::MatrixXi& y_endpoints, const Eigen::VectorXi& y_merged);

double min_over(const std::vector<double>& v);

}  // namespace mergelab

#endif  // MERGELAB_EVOLVE_HPP_
