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

#include "mergelab/merge_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mergelab/error.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {

namespace {

void check_models(const std::vector<WeightSet>& models) {
  require(!models.empty(), Status::kInvalidArgument, "no models given");
  for (const auto& m : models) check_compatible(models[0], m);
}

}  // namespace

WeightSet weight_average(const std::vector<WeightSet>& models) {
  check_models(models);
  const size_t n = models.size();
  std::vector<Eigen::VectorXd> flat;
  for (const auto& m : models) flat.push_back(flatten(m));
  Eigen::VectorXd out(flat[0].size());
  std::vector<double> vals(n);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    for (size_t m = 0; m < n; ++m) vals[m] = flat[m][i];
    std::sort(vals.begin(), vals.end());
    if (vals.front() == vals.back()) {
      out[i] = vals.front();
      continue;
    }
    double s = 0.0;
    for (double v : vals) s += v;
    out[i] = s / static_cast<double>(n);
  }
  return unflatten(models[0].arch, out);
}

SlerpResult slerp(const WeightSet& a, const WeightSet& b, double t) {
  check_compatible(a, b);
  require(t >= 0.0 && t <= 1.0, Status::kInvalidArgument, "slerp: t must be in [0, 1]");
  Eigen::VectorXd u = flatten(a), v = flatten(b);
  require(u.norm() > 0 && v.norm() > 0, Status::kInvalidArgument,
          "slerp: zero-norm operand");
  SlerpResult out;
  if (t == 0.0) {
    out.weights = a;
    return out;
  }
  if (t == 1.0) {
    out.weights = b;
    return out;
  }
  double c = std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0);
  double omega = std::acos(c);
  Eigen::VectorXd r;
  if (omega < 1e-6) {
    out.linear_fallback = true;
    r = (1.0 - t) * u + t * v;
  } else {
    double so = std::sin(omega);
    r = (std::sin((1.0 - t) * omega) / so) * u + (std::sin(t * omega) / so) * v;
  }
  out.weights = unflatten(a.arch, r);
  return out;
}

std::vector<char> top_k_mask(const Eigen::VectorXd& v, double frac) {
  require(frac > 0.0 && frac <= 1.0, Status::kInvalidArgument,
          "trim fraction must be in (0, 1]");
  const size_t P = static_cast<size_t>(v.size());
  size_t keep = static_cast<size_t>(std::ceil(frac * static_cast<double>(P) - 1e-9));
  keep = std::min(keep, P);
  std::vector<size_t> idx(P);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t x, size_t y) {
    return std::abs(v[static_cast<Eigen::Index>(x)]) > std::abs(v[static_cast<Eigen::Index>(y)]);
  });
  std::vector<char> mask(P, 0);
  for (size_t i = 0; i < keep; ++i) mask[idx[i]] = 1;
  return mask;
}

WeightSet ties_merge(const WeightSet& theta_pre, const std::vector<TaskVector>& taus,
                     double trim_frac, double lambda) {
  require(!taus.empty(), Status::kInvalidArgument, "ties: no task vectors");
  for (const auto& t : taus) check_compatible(theta_pre, t);
  const size_t T = taus.size();
  std::vector<Eigen::VectorXd> trimmed;
  for (const auto& tau : taus) {
    Eigen::VectorXd f = flatten(tau);
    std::vector<char> mask = top_k_mask(f, trim_frac);
    for (Eigen::Index i = 0; i < f.size(); ++i)
      if (!mask[static_cast<size_t>(i)]) f[i] = 0.0;
    trimmed.push_back(std::move(f));
  }
  const Eigen::Index P = trimmed[0].size();
  Eigen::VectorXd merged = Eigen::VectorXd::Zero(P);
  for (Eigen::Index i = 0; i < P; ++i) {
    double sum = 0.0;
    for (size_t t = 0; t < T; ++t) sum += trimmed[t][i];
    if (sum == 0.0) continue;
    double acc = 0.0;
    int count = 0;
    for (size_t t = 0; t < T; ++t) {
      double x = trimmed[t][i];
      if (x != 0.0 && (x > 0) == (sum > 0)) {
        acc += x;
        ++count;
      }
    }
    if (count) merged[i] = acc / count;
  }
  return theta_pre + lambda * unflatten(theta_pre.arch, merged);
}

TaskVector dare(const TaskVector& tau, double p, uint64_t seed) {
  require(p >= 0.0 && p < 1.0, Status::kInvalidArgument, "dare: p must be in [0, 1)");
  if (p == 0.0) return tau;
  Eigen::VectorXd f = flatten(tau);
  Rng rng(seed);
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < f.size(); ++i)
    f[i] = rng.uniform() < p ? 0.0 : f[i] * scale;
  return unflatten(tau.arch, f);
}

const char* merge_method_name(MergeMethod m) {
  switch (m) {
    case MergeMethod::kAverage: return "average";
    case MergeMethod::kTaskArithmetic: return "task_arithmetic";
    case MergeMethod::kSlerp: return "slerp";
    case MergeMethod::kTies: return "ties";
    case MergeMethod::kDareTa: return "dare_ta";
    case MergeMethod::kDareTies: return "dare_ties";
  }
  return "unknown";
}

MergeMethod parse_merge_method(const std::string& s) {
  for (MergeMethod m : {MergeMethod::kAverage, MergeMethod::kTaskArithmetic,
                        MergeMethod::kSlerp, MergeMethod::kTies, MergeMethod::kDareTa,
                        MergeMethod::kDareTies})
    if (s == merge_method_name(m)) return m;
  fail(Status::kInvalidArgument, "unknown merge method: " + s);
}

bool is_stochastic(MergeMethod m) {
  return m == MergeMethod::kDareTa || m == MergeMethod::kDareTies;
}

size_t recipe_arity(MergeMethod m, size_t num_models) {
  switch (m) {
    case MergeMethod::kAverage: return 0;
    case MergeMethod::kTaskArithmetic: return num_models;
    case MergeMethod::kSlerp: return 1;
    case MergeMethod::kTies: return 2;
    case MergeMethod::kDareTa: return 1 + num_models;
    case MergeMethod::kDareTies: return 3;
  }
  return 0;
}

void recipe_bounds(MergeMethod m, size_t num_models, std::vector<double>& lo,
                   std::vector<double>& hi) {
  const size_t n = recipe_arity(m, num_models);
  lo.assign(n, 0.0);
  hi.assign(n, 1.0);
  if (m == MergeMethod::kDareTa || m == MergeMethod::kDareTies) hi[0] = 0.99;
  // The trim fraction must stay positive.
  if (m == MergeMethod::kTies) lo[0] = 1e-3;
  if (m == MergeMethod::kDareTies) lo[1] = 1e-3;
}

void MergeRecipe::validate(size_t num_models) const {
  require(num_models >= 1, Status::kInvalidArgument, "recipe: no models");
  require(method != MergeMethod::kSlerp || num_models == 2, Status::kInvalidArgument,
          "recipe: slerp requires exactly 2 models");
  std::vector<double> lo, hi;
  recipe_bounds(method, num_models, lo, hi);
  require(coeffs.size() == lo.size(), Status::kInvalidArgument,
          std::string("recipe: wrong coefficient count for ") + merge_method_name(method));
  for (size_t i = 0; i < coeffs.size(); ++i)
    require(std::isfinite(coeffs[i]) && coeffs[i] >= lo[i] && coeffs[i] <= hi[i],
            Status::kInvalidArgument, "recipe: coefficient out of bounds");
}

nlohmann::json recipe_to_json(const MergeRecipe& r) {
  nlohmann::json j;
  j["method"] = merge_method_name(r.method);
  j["coeffs"] = r.coeffs;
  if (is_stochastic(r.method)) j["seed"] = r.seed;
  return j;
}

MergeRecipe recipe_from_json(const nlohmann::json& j) {
  MergeRecipe r;
  try {
    r.method = parse_merge_method(j.at("method").get<std::string>());
    r.coeffs = j.value("coeffs", std::vector<double>{});
    if (is_stochastic(r.method)) {
      require(j.contains("seed"), Status::kInvalidArgument,
              "recipe: stochastic method needs a seed");
      r.seed = j.at("seed").get<uint64_t>();
    } else {
      require(!j.contains("seed"), Status::kInvalidArgument,
              "recipe: seed given for a deterministic method");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Status::kFormatError, std::string("recipe: ") + e.what());
  }
  return r;
}

WeightSet apply_recipe(const MergeRecipe& recipe, const WeightSet& theta_pre,
                       const std::vector<WeightSet>& models) {
  check_models(models);
  check_compatible(theta_pre, models[0]);
  recipe.validate(models.size());
  const auto& c = recipe.coeffs;
  auto taus = [&] {
    std::vector<TaskVector> out;
    for (const auto& m : models) out.push_back(m - theta_pre);
    return out;
  };
  auto weighted_sum = [&](const std::vector<TaskVector>& ts, size_t offset) {
    WeightSet out = theta_pre;
    for (size_t t = 0; t < ts.size(); ++t) out += c[offset + t] * ts[t];
    return out;
  };
  auto dared = [&] {
    std::vector<TaskVector> ts = taus();
    for (size_t t = 0; t < ts.size(); ++t) ts[t] = dare(ts[t], c[0], derive_seed(recipe.seed, t));
    return ts;
  };
  switch (recipe.method) {
    case MergeMethod::kAverage: return weight_average(models);
    case MergeMethod::kTaskArithmetic: return weighted_sum(taus(), 0);
    case MergeMethod::kSlerp: return slerp(models[0], models[1], c[0]).weights;
    case MergeMethod::kTies: return ties_merge(theta_pre, taus(), c[0], c[1]);
    case MergeMethod::kDareTa: return weighted_sum(dared(), 1);
    case MergeMethod::kDareTies: return ties_merge(theta_pre, dared(), c[1], c[2]);
  }
  fail(Status::kInvalidArgument, "apply_recipe: unknown method");
}

}  // namespace mergelab
