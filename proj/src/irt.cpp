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

#include "mergelab/irt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mergelab/error.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double bernoulli_ll(int y, double z) { return y ? log_sigmoid(z) : log_sigmoid(-z); }

void check_binary(const Eigen::MatrixXi& Y, const char* who) {
  for (Eigen::Index i = 0; i < Y.size(); ++i)
    require(Y.data()[i] == 0 || Y.data()[i] == 1, Status::kInvalidArgument,
            std::string(who) + ": correctness entries must be 0 or 1");
}

}  // namespace

void ItemParams::validate() const {
  require(a.rows() == beta.size(), Status::kShapeMismatch, "items: a and beta disagree");
  require(a.allFinite() && beta.allFinite(), Status::kInvalidArgument,
          "items: non-finite parameters");
}

double irt_prob(const Eigen::VectorXd& gamma, const Eigen::VectorXd& a, double beta) {
  require(gamma.size() == a.size(), Status::kShapeMismatch, "irt_prob: dimension mismatch");
  return sigmoid(a.dot(gamma) - beta);
}

Eigen::VectorXd irt_probs(const ItemParams& items, const Eigen::VectorXd& gamma) {
  require(gamma.size() == items.a.cols(), Status::kShapeMismatch,
          "irt_probs: dimension mismatch");
  Eigen::VectorXd z = items.a * gamma - items.beta;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

namespace {

struct JointState {
  Eigen::MatrixXd A, G;
  Eigen::VectorXd b;
};

double joint_log_posterior(const Correctness& Y, const JointState& s, double u) {
  Eigen::MatrixXd Z = s.A * s.G.transpose();
  Z.colwise() -= s.b;
  double ll = 0.0;
  for (Eigen::Index m = 0; m < Y.cols(); ++m)
    for (Eigen::Index i = 0; i < Y.rows(); ++i) ll += bernoulli_ll(Y(i, m), Z(i, m));
  return ll - 0.5 * u * (s.A.squaredNorm() + s.b.squaredNorm() + s.G.squaredNorm());
}

}  // namespace

IrtFit fit_items(const Correctness& Y, const IrtFitConfig& cfg) {
  require(Y.rows() >= 2 && Y.cols() >= 2, Status::kInvalidArgument,
          "fit_items: need at least 2 items and 2 models");
  require(cfg.d >= 1 && cfg.steps >= 0 && cfg.lr > 0 && cfg.prior_precision > 0,
          Status::kInvalidArgument, "fit_items: bad configuration");
  check_binary(Y, "fit_items");
  const double u = cfg.prior_precision;
  Rng rng(cfg.seed);
  JointState s{Eigen::MatrixXd(Y.rows(), cfg.d), Eigen::MatrixXd(Y.cols(), cfg.d),
               Eigen::VectorXd(Y.rows())};
  for (Eigen::Index i = 0; i < s.A.size(); ++i) s.A.data()[i] = 0.1 * rng.normal();
  for (Eigen::Index i = 0; i < s.G.size(); ++i) s.G.data()[i] = 0.1 * rng.normal();
  for (Eigen::Index i = 0; i < s.b.size(); ++i) s.b[i] = 0.1 * rng.normal();

  auto project = [&](JointState& st) {
    if (!std::isfinite(cfg.a_cap)) return;
    for (Eigen::Index i = 0; i < st.A.rows(); ++i) {
      double n = st.A.row(i).norm();
      if (n > cfg.a_cap) st.A.row(i) *= cfg.a_cap / n;
    }
  };
  project(s);

  IrtFit out;
  double post = joint_log_posterior(Y, s, u);
  out.trace.push_back(post);
  double lr = cfg.lr;
  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd Z = s.A * s.G.transpose();
    Z.colwise() -= s.b;
    Eigen::MatrixXd R = Y.cast<double>() - Z.unaryExpr([](double v) { return sigmoid(v); });
    JointState g{R * s.G - u * s.A, R.transpose() * s.A - u * s.G,
                 -R.rowwise().sum() - u * s.b};
    bool moved = false;
    for (int halving = 0; halving < 40; ++halving) {
      JointState c{s.A + lr * g.A, s.G + lr * g.G, s.b + lr * g.b};
      project(c);
      double cp = joint_log_posterior(Y, c, u);
      if (!std::isfinite(cp))
        fail(Status::kNumerical, "fit_items: non-finite log-posterior at step " +
                                     std::to_string(step) + " (lr " + std::to_string(lr) + ")");
      if (cp >= post) {
        moved = cp > post;
        s = std::move(c);
        post = cp;
        lr *= 1.2;
        break;
      }
      lr *= 0.5;
    }
    out.trace.push_back(post);
    if (!moved) break;
  }
  out.items.a = s.A;
  out.items.beta = s.b;
  out.gammas = s.G;
  out.log_posterior = post;
  return out;
}

AbilityFit fit_ability(const Eigen::VectorXi& y, const ItemParams& items, double prior_precision,
                       int steps) {
  items.validate();
  require(y.size() == items.beta.size() && y.size() >= 1, Status::kShapeMismatch,
          "fit_ability: correctness length must equal the item count");
  require(prior_precision > 0, Status::kInvalidArgument, "fit_ability: bad prior precision");
  check_binary(y, "fit_ability");
  const double u = prior_precision;
  const Eigen::Index d = items.a.cols();
  auto posterior = [&](const Eigen::VectorXd& g) {
    Eigen::VectorXd z = items.a * g - items.beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) ll += bernoulli_ll(y[i], z[i]);
    return ll - 0.5 * u * g.squaredNorm();
  };
  AbilityFit out;
  out.gamma = Eigen::VectorXd::Zero(d);
  out.flat = items.a.cwiseAbs().maxCoeff() == 0.0;
  out.log_posterior = posterior(out.gamma);
  if (out.flat) return out;
  for (int it = 0; it < steps; ++it) {
    Eigen::VectorXd p = irt_probs(items, out.gamma);
    Eigen::VectorXd grad = items.a.transpose() * (y.cast<double>() - p) - u * out.gamma;
    Eigen::VectorXd w = p.cwiseProduct(Eigen::VectorXd::Ones(p.size()) - p);
    Eigen::MatrixXd H = items.a.transpose() * w.asDiagonal() * items.a;
    H.diagonal().array() += u;
    Eigen::VectorXd dir = H.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 50; ++k, t *= 0.5) {
      Eigen::VectorXd cand = out.gamma + t * dir;
      double cp = posterior(cand);
      require(std::isfinite(cp), Status::kNumerical, "fit_ability: non-finite log-posterior");
      if (cp >= out.log_posterior) {
        moved = cp > out.log_posterior;
        out.gamma = cand;
        out.log_posterior = cp;
        break;
      }
    }
    if (!moved || grad.norm() <= 1e-12) break;
  }
  return out;
}

namespace {

Eigen::MatrixXd xi_features(const std::vector<size_t>& rows, const Eigen::MatrixXd& gammas,
                            const ItemParams& items) {
  Eigen::MatrixXd C(static_cast<Eigen::Index>(rows.size()), gammas.rows());
  for (size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < static_cast<size_t>(items.num_items()), Status::kInvalidArgument,
            "fit_xi: item index out of range");
    C.row(static_cast<Eigen::Index>(r)) =
        (gammas * items.a.row(static_cast<Eigen::Index>(rows[r])).transpose()).transpose();
  }
  return C;
}

Eigen::VectorXd row_betas(const std::vector<size_t>& rows, const ItemParams& items) {
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) b[static_cast<Eigen::Index>(r)] = items.beta[static_cast<Eigen::Index>(rows[r])];
  return b;
}

}  // namespace

double xi_log_likelihood(const Eigen::VectorXi& y_sub, const std::vector<size_t>& rows,
                         const Eigen::MatrixXd& gammas, const ItemParams& items,
                         const Eigen::VectorXd& xi) {
  require(y_sub.size() == static_cast<Eigen::Index>(rows.size()), Status::kShapeMismatch,
          "fit_xi: correctness and row counts differ");
  require(xi.size() == gammas.rows(), Status::kShapeMismatch, "fit_xi: xi length");
  Eigen::VectorXd z = xi_features(rows, gammas, items) * xi - row_betas(rows, items);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) ll += bernoulli_ll(y_sub[i], z[i]);
  return ll;
}

XiFit fit_xi(const Eigen::VectorXi& y_sub, const std::vector<size_t>& rows,
             const Eigen::MatrixXd& gammas, const ItemParams& items, int steps) {
  require(!rows.empty(), Status::kInvalidArgument, "fit_xi: empty subset");
  require(gammas.rows() >= 1, Status::kInvalidArgument, "fit_xi: need at least one endpoint");
  require(gammas.cols() == items.a.cols(), Status::kShapeMismatch, "fit_xi: dimension mismatch");
  require(y_sub.size() == static_cast<Eigen::Index>(rows.size()), Status::kShapeMismatch,
          "fit_xi: correctness and row counts differ");
  check_binary(y_sub, "fit_xi");
  const Eigen::Index n = gammas.rows();
  Eigen::MatrixXd C = xi_features(rows, gammas, items);
  Eigen::VectorXd b = row_betas(rows, items);
  Eigen::VectorXd yd = y_sub.cast<double>();
  XiFit out;
  out.xi = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  out.flat = C.cwiseAbs().maxCoeff() == 0.0;
  if (!out.flat) {
    const double lip = 0.25 * C.squaredNorm();
    for (int it = 0; it < steps; ++it) {
      Eigen::VectorXd z = C * out.xi - b;
      Eigen::VectorXd p = z.unaryExpr([](double v) { return sigmoid(v); });
      Eigen::VectorXd next = (out.xi + C.transpose() * (yd - p) / lip).cwiseMax(0.0).cwiseMin(1.0);
      double change = (next - out.xi).cwiseAbs().maxCoeff();
      out.xi = next;
      if (change <= 1e-13) break;
    }
  }
  out.log_likelihood = xi_log_likelihood(y_sub, rows, gammas, items, out.xi);
  return out;
}

double mp_irt_formula(double sum_observed, size_t n_sub, double sum_predicted, size_t n_total) {
  require(n_sub >= 1 && n_sub <= n_total, Status::kInvalidArgument,
          "mp_irt: need 1 <= |Dbar| <= |D|");
  const double tau = static_cast<double>(n_sub) / static_cast<double>(n_total);
  double est = sum_observed / static_cast<double>(n_total);
  if (n_sub < n_total)
    est += (1.0 - tau) / static_cast<double>(n_total - n_sub) * sum_predicted;
  return est;
}

double mp_irt(const Eigen::VectorXi& y_sub, const std::vector<size_t>& rows,
              const Eigen::VectorXd& xi, const Eigen::MatrixXd& gammas, const ItemParams& items) {
  require(y_sub.size() == static_cast<Eigen::Index>(rows.size()), Status::kShapeMismatch,
          "mp_irt: correctness and row counts differ");
  require(xi.size() == gammas.rows(), Status::kShapeMismatch, "mp_irt: xi length");
  check_binary(y_sub, "mp_irt");
  const size_t N = static_cast<size_t>(items.num_items());
  std::vector<char> in(N, 0);
  for (size_t r : rows) {
    require(r < N, Status::kInvalidArgument, "mp_irt: item index out of range");
    require(!in[r], Status::kInvalidArgument, "mp_irt: duplicate item index");
    in[r] = 1;
  }
  double sum_p = 0.0;
  if (rows.size() < N) {
    Eigen::VectorXd p = irt_probs(items, gammas.transpose() * xi);
    for (size_t i = 0; i < N; ++i)
      if (!in[i]) sum_p += p[static_cast<Eigen::Index>(i)];
  }
  return mp_irt_formula(static_cast<double>(y_sub.sum()), rows.size(), sum_p, N);
}

double gmp_irt(const Eigen::VectorXi& y_sub, double mp_estimate, double c) {
  require(y_sub.size() >= 1, Status::kInvalidArgument, "gmp_irt: empty subset");
  require(c >= 0.0 && c <= 1.0, Status::kInvalidArgument, "gmp_irt: c must be in [0, 1]");
  const double observed = static_cast<double>(y_sub.sum()) / static_cast<double>(y_sub.size());
  return c * observed + (1.0 - c) * mp_estimate;
}

double fit_c_adaptive(const std::vector<EndpointEstimate>& endpoints, int grid_points) {
  require(!endpoints.empty(), Status::kInvalidArgument, "fit_c_adaptive: no endpoints");
  require(grid_points >= 2, Status::kInvalidArgument, "fit_c_adaptive: grid too small");
  double sum = 0.0;
  for (const auto& e : endpoints) {
    double best_c = 0.0, best_err = std::numeric_limits<double>::infinity();
    for (int j = 0; j < grid_points; ++j) {
      const double c = static_cast<double>(j) / (grid_points - 1);
      const double err = std::abs(c * e.observed + (1.0 - c) * e.mp - e.truth);
      if (err < best_err) {
        best_err = err;
        best_c = c;
      }
    }
    sum += best_c;
  }
  return sum / static_cast<double>(endpoints.size());
}

std::vector<size_t> uniform_subset(size_t n, size_t k, uint64_t seed) {
  require(k >= 1 && k <= n, Status::kInvalidArgument,
          "subset size " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  Rng rng(seed);
  std::vector<size_t> perm = rng.permutation(n);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return perm;
}

StabilityReport stability_harness(const SubsetFitness& F, int num_theta, size_t dataset_size,
                                  size_t subset_size, int num_subsets, uint64_t seed) {
  require(num_subsets >= 2, Status::kInvalidArgument, "stability_harness: need S >= 2");
  std::vector<std::vector<size_t>> subsets;
  for (int s = 0; s < num_subsets; ++s)
    subsets.push_back(
        uniform_subset(dataset_size, subset_size, derive_seed(seed, static_cast<uint64_t>(s))));
  return stability_on_subsets(F, num_theta, dataset_size, subsets);
}

StabilityReport stability_on_subsets(const SubsetFitness& F, int num_theta, size_t dataset_size,
                                     const std::vector<std::vector<size_t>>& subsets) {
  require(num_theta >= 1, Status::kInvalidArgument, "stability_harness: empty theta grid");
  require(!subsets.empty(), Status::kInvalidArgument, "stability_harness: no subsets");
  const int num_subsets = static_cast<int>(subsets.size());
  std::vector<size_t> all(dataset_size);
  std::iota(all.begin(), all.end(), size_t{0});
  std::vector<double> full(static_cast<size_t>(num_theta));
  for (int t = 0; t < num_theta; ++t) full[static_cast<size_t>(t)] = F(t, all);
  StabilityReport r;
  r.m_star = *std::min_element(full.begin(), full.end());
  const double slack = 1e-12 * (1.0 + std::abs(r.m_star));
  std::vector<double> mean_dev(static_cast<size_t>(num_theta), 0.0);
  r.optimality_holds = true;
  for (int s = 0; s < num_subsets; ++s) {
    const std::vector<size_t>& rows = subsets[static_cast<size_t>(s)];
    double eps = 0.0, m_hat = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int t = 0; t < num_theta; ++t) {
      const double v = F(t, rows);
      const double dev = std::abs(full[static_cast<size_t>(t)] - v);
      mean_dev[static_cast<size_t>(t)] += dev / num_subsets;
      eps = std::max(eps, dev);
      if (v < m_hat) {
        m_hat = v;
        arg = t;
      }
    }
    r.eps_s.push_back(eps);
    r.optimality_gap.push_back(full[static_cast<size_t>(arg)] - r.m_star);
    if (r.optimality_gap.back() > 2.0 * eps + slack) r.optimality_holds = false;
    r.mean_m_hat += m_hat / num_subsets;
  }
  r.eps_hat = *std::max_element(mean_dev.begin(), mean_dev.end());
  r.gap = std::abs(r.m_star - r.mean_m_hat);
  r.expectation_holds = r.gap <= r.eps_hat + slack;
  r.bound_holds = r.optimality_holds && r.expectation_holds;
  return r;
}

UnbiasednessCurve unbiasedness_sim(const UnbiasednessConfig& cfg) {
  require(!cfg.sizes.empty() && cfg.trials >= 1 && cfg.d >= 1 && cfg.endpoints >= 1,
          Status::kInvalidArgument, "unbiasedness_sim: bad configuration");
  for (size_t i = 0; i < cfg.sizes.size(); ++i) {
    require(cfg.sizes[i] >= 1 && cfg.sizes[i] <= cfg.dataset_size, Status::kInvalidArgument,
            "unbiasedness_sim: sizes must lie in [1, dataset_size]");
    require(i == 0 || cfg.sizes[i] > cfg.sizes[i - 1], Status::kInvalidArgument,
            "unbiasedness_sim: sizes must be increasing");
  }
  const Eigen::Index N = static_cast<Eigen::Index>(cfg.dataset_size);
  UnbiasednessCurve out;
  out.sizes = cfg.sizes;
  out.mean_abs_error.assign(cfg.sizes.size(), 0.0);
  for (int t = 0; t < cfg.trials; ++t) {
    const uint64_t tseed = derive_seed(cfg.seed, static_cast<uint64_t>(t));
    Rng rng(tseed);
    ItemParams items{Eigen::MatrixXd(N, cfg.d), Eigen::VectorXd(N)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    for (Eigen::Index i = 0; i < items.a.size(); ++i) items.a.data()[i] = scale * rng.normal();
    for (Eigen::Index i = 0; i < N; ++i) items.beta[i] = rng.normal();
    Eigen::MatrixXd gammas(cfg.endpoints, cfg.d);
    for (Eigen::Index i = 0; i < gammas.size(); ++i) gammas.data()[i] = rng.normal();
    Eigen::VectorXd xi_true(cfg.endpoints);
    for (Eigen::Index j = 0; j < xi_true.size(); ++j) xi_true[j] = rng.uniform();
    Eigen::VectorXd p = irt_probs(items, gammas.transpose() * xi_true);
    Eigen::VectorXi y(N);
    for (Eigen::Index i = 0; i < N; ++i) y[i] = rng.uniform() < p[i] ? 1 : 0;
    const double truth = static_cast<double>(y.sum()) / static_cast<double>(N);
    for (size_t k = 0; k < cfg.sizes.size(); ++k) {
      std::vector<size_t> rows = uniform_subset(cfg.dataset_size, cfg.sizes[k],
                                                derive_seed(tseed, 1 + cfg.sizes[k]));
      Eigen::VectorXi ys(static_cast<Eigen::Index>(rows.size()));
      for (size_t r = 0; r < rows.size(); ++r)
        ys[static_cast<Eigen::Index>(r)] = y[static_cast<Eigen::Index>(rows[r])];
      XiFit fit = fit_xi(ys, rows, gammas, items);
      out.mean_abs_error[k] += std::abs(mp_irt(ys, rows, fit.xi, gammas, items) - truth) / cfg.trials;
    }
  }
  for (size_t k = 1; k < out.mean_abs_error.size(); ++k) {
    const double up = out.mean_abs_error[k] - out.mean_abs_error[k - 1];
    if (up > 0) {
      ++out.inversions;
      out.max_inversion = std::max(out.max_inversion, up);
    }
  }
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), Status::kShapeMismatch, "rank_correlation: length mismatch");
  require(x.size() >= 2, Status::kInvalidArgument, "rank_correlation: need at least 2 points");
  std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

nlohmann::json irt_to_json(const IrtModel& m) {
  m.items.validate();
  nlohmann::json j;
  j["d"] = m.items.dim();
  j["items"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.items.a.rows(); ++i) {
    Eigen::VectorXd a = m.items.a.row(i).transpose();
    j["items"].push_back({{"a", std::vector<double>(a.data(), a.data() + a.size())},
                          {"beta", m.items.beta[i]}});
  }
  j["gammas"] = nlohmann::json::object();
  for (const auto& [name, g] : m.gammas)
    j["gammas"][name] = std::vector<double>(g.data(), g.data() + g.size());
  return j;
}

IrtModel irt_from_json(const nlohmann::json& j) {
  IrtModel m;
  try {
    const int d = j.at("d").get<int>();
    require(d >= 1, Status::kFormatError, "irt json: d must be >= 1");
    const auto& items = j.at("items");
    m.items.a.resize(static_cast<Eigen::Index>(items.size()), d);
    m.items.beta.resize(static_cast<Eigen::Index>(items.size()));
    for (size_t i = 0; i < items.size(); ++i) {
      auto a = items[i].at("a").get<std::vector<double>>();
      require(static_cast<int>(a.size()) == d, Status::kFormatError,
              "irt json: item " + std::to_string(i) + " has the wrong dimension");
      for (int k = 0; k < d; ++k) m.items.a(static_cast<Eigen::Index>(i), k) = a[static_cast<size_t>(k)];
      m.items.beta[static_cast<Eigen::Index>(i)] = items[i].at("beta").get<double>();
    }
    for (const auto& [name, g] : j.at("gammas").items()) {
      auto v = g.get<std::vector<double>>();
      require(static_cast<int>(v.size()) == d, Status::kFormatError,
              "irt json: gamma '" + name + "' has the wrong dimension");
      m.gammas[name] = Eigen::Map<Eigen::VectorXd>(v.data(), d);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Status::kFormatError, std::string("irt json: ") + e.what());
  }
  m.items.validate();
  return m;
}

}  // namespace mergelab
