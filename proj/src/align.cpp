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

#include "mergelab/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mergelab/error.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {

Eigen::MatrixXd perm_matrix(const Perm& p) {
  const Eigen::Index n = static_cast<Eigen::Index>(p.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) P(i, p[static_cast<size_t>(i)]) = 1.0;
  return P;
}

Perm perm_from_matrix(const Eigen::MatrixXd& P) {
  require(P.rows() == P.cols(), Status::kShapeMismatch,
          "permutation matrix must be square");
  const Eigen::Index n = P.rows();
  Perm p(static_cast<size_t>(n), -1);
  std::vector<int> used(static_cast<size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double x = P(i, j);
      if (x == 1.0) {
        require(p[static_cast<size_t>(i)] < 0 && !used[static_cast<size_t>(j)],
                Status::kInvalidArgument, "matrix is not a permutation");
        p[static_cast<size_t>(i)] = static_cast<int>(j);
        used[static_cast<size_t>(j)] = 1;
      } else {
        require(x == 0.0, Status::kInvalidArgument,
                "soft permutation rejected; harden it first");
      }
    }
    require(p[static_cast<size_t>(i)] >= 0, Status::kInvalidArgument,
            "matrix is not a permutation");
  }
  return p;
}

Perm inverse(const Perm& p) {
  Perm q(p.size());
  for (size_t i = 0; i < p.size(); ++i) q[static_cast<size_t>(p[i])] = static_cast<int>(i);
  return q;
}

// ---------------------------------------------------------------------------
// Linear assignment

namespace {

// Hungarian method with potentials on cost = -score. Returns potentials
// u (rows) and v (cols) with score(i,j) <= u_i + v_j, tight on the optimum.
void hungarian_max(const Eigen::MatrixXd& score, std::vector<double>& u,
                   std::vector<double>& v, std::vector<int>& row_of_col) {
  const int n = static_cast<int>(score.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> U(n + 1, 0.0), V(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = -score(i0 - 1, j - 1) - U[i0] - V[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          U[p[j]] += delta;
          V[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  u.assign(n, 0.0);
  v.assign(n, 0.0);
  row_of_col.assign(n, -1);
  for (int i = 0; i < n; ++i) u[i] = -U[i + 1];
  for (int j = 0; j < n; ++j) {
    v[j] = -V[j + 1];
    row_of_col[j] = p[j + 1] - 1;
  }
}

// Kuhn augmenting path restricted to allowed edges.
bool augment(int r, const std::vector<std::vector<int>>& adj,
             const std::vector<char>& col_blocked, std::vector<int>& match_col,
             std::vector<char>& seen) {
  for (int c : adj[r]) {
    if (col_blocked[c] || seen[c]) continue;
    seen[c] = 1;
    if (match_col[c] < 0 || augment(match_col[c], adj, col_blocked, match_col, seen)) {
      match_col[c] = r;
      return true;
    }
  }
  return false;
}

bool rows_matchable(int from_row, const std::vector<std::vector<int>>& adj,
                    const std::vector<char>& col_blocked) {
  const int n = static_cast<int>(adj.size());
  std::vector<int> match_col(n, -1);
  for (int r = from_row; r < n; ++r) {
    std::vector<char> seen(n, 0);
    if (!augment(r, adj, col_blocked, match_col, seen)) return false;
  }
  return true;
}

}  // namespace

Perm lap_max(const Eigen::MatrixXd& score, double* value) {
  require(score.rows() == score.cols(), Status::kShapeMismatch,
          "lap_max: score matrix must be square");
  require(score.allFinite(), Status::kInvalidArgument,
          "lap_max: non-finite score");
  const int n = static_cast<int>(score.rows());
  Perm perm(n);
  if (n == 0) {
    if (value) *value = 0.0;
    return perm;
  }
  std::vector<double> u, v;
  std::vector<int> row_of_col;
  hungarian_max(score, u, v, row_of_col);
  // Optimal assignments are exactly the perfect matchings on tight edges;
  // pick the lexicographically smallest one greedily.
  double scale = 1.0 + score.cwiseAbs().maxCoeff();
  double eps = 1e-11 * scale;
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (u[i] + v[j] - score(i, j) <= eps) adj[i].push_back(j);
  for (int j = 0; j < n; ++j) {
    int i = row_of_col[j];
    if (std::find(adj[i].begin(), adj[i].end(), j) == adj[i].end()) {
      adj[i].push_back(j);
      std::sort(adj[i].begin(), adj[i].end());
    }
  }
  std::vector<char> blocked(n, 0);
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int j : adj[i]) {
      if (blocked[j]) continue;
      blocked[j] = 1;
      if (rows_matchable(i + 1, adj, blocked)) {
        perm[i] = j;
        placed = true;
        break;
      }
      blocked[j] = 0;
    }
    if (!placed) fail(Status::kRuntime, "lap_max: tight graph has no matching");
  }
  if (value) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += score(i, perm[i]);
    *value = s;
  }
  return perm;
}

// ---------------------------------------------------------------------------
// PermSet helpers

PermSet identity_perms(const ArchSpec& arch) {
  PermSet p;
  for (int l = 1; l < arch.num_layers(); ++l)
    p.P.push_back(Eigen::MatrixXd::Identity(arch.widths[l], arch.widths[l]));
  return p;
}

PermSet transpose(const PermSet& p) {
  PermSet t;
  for (const auto& m : p.P) t.P.push_back(m.transpose());
  return t;
}

PermSet compose(const PermSet& a, const PermSet& b) {
  require(a.P.size() == b.P.size(), Status::kShapeMismatch,
          "compose: layer count differs");
  PermSet c;
  for (size_t i = 0; i < a.P.size(); ++i) c.P.push_back(a.P[i] * b.P[i]);
  return c;
}

bool is_hard(const PermSet& p, double tol) {
  for (const auto& m : p.P) {
    if (m.rows() != m.cols()) return false;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double x = m.data()[i];
      if (std::abs(x) > tol && std::abs(x - 1.0) > tol) return false;
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (std::abs(m.row(i).sum() - 1.0) > tol) return false;
      if (std::abs(m.col(i).sum() - 1.0) > tol) return false;
    }
  }
  return true;
}

bool is_doubly_stochastic(const PermSet& p, double tol) {
  for (const auto& m : p.P) {
    if (m.minCoeff() < -tol) return false;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (std::abs(m.row(i).sum() - 1.0) > tol) return false;
      if (std::abs(m.col(i).sum() - 1.0) > tol) return false;
    }
  }
  return true;
}

bool is_identity(const PermSet& p) {
  for (const auto& m : p.P)
    if (!m.isIdentity(0.0)) return false;
  return true;
}

PermSet harden(const PermSet& p) {
  PermSet h;
  for (const auto& m : p.P) h.P.push_back(perm_matrix(lap_max(m)));
  return h;
}

namespace {

void check_permset(const WeightSet& w, const PermSet& p) {
  require(static_cast<int>(p.P.size()) == w.arch.num_layers() - 1,
          Status::kShapeMismatch, "permset layer count does not match arch");
  for (size_t i = 0; i < p.P.size(); ++i)
    require(p.P[i].rows() == w.arch.widths[i + 1] &&
                p.P[i].cols() == w.arch.widths[i + 1],
            Status::kShapeMismatch, "permset matrix size does not match arch");
}

}  // namespace

WeightSet apply_perm(const WeightSet& w, const PermSet& p) {
  check_permset(w, p);
  const int L = w.arch.num_layers();
  std::vector<Perm> perms(L + 1);
  perms[0].resize(w.arch.widths[0]);
  std::iota(perms[0].begin(), perms[0].end(), 0);
  perms[L].resize(w.arch.widths[L]);
  std::iota(perms[L].begin(), perms[L].end(), 0);
  for (int l = 1; l < L; ++l) perms[l] = perm_from_matrix(p.P[l - 1]);
  WeightSet out = w;
  for (int l = 1; l <= L; ++l) {
    const Layer& src = w.layers[l - 1];
    Layer& dst = out.layers[l - 1];
    const Perm& rows = perms[l];
    const Perm& cols = perms[l - 1];
    for (Eigen::Index i = 0; i < src.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < src.W.cols(); ++j)
        dst.W(i, j) = src.W(rows[static_cast<size_t>(i)], cols[static_cast<size_t>(j)]);
      if (src.b.size()) dst.b[i] = src.b[rows[static_cast<size_t>(i)]];
    }
  }
  return out;
}

WeightSet apply_soft_perm(const WeightSet& w, const PermSet& p) {
  check_permset(w, p);
  const int L = w.arch.num_layers();
  WeightSet out = w;
  for (int l = 1; l <= L; ++l) {
    Eigen::MatrixXd W = w.layers[l - 1].W;
    Eigen::VectorXd b = w.layers[l - 1].b;
    if (l < L) {
      W = p.P[l - 1] * W;
      if (b.size()) b = p.P[l - 1] * b;
    }
    if (l > 1) W = W * p.P[l - 2].transpose();
    out.layers[l - 1].W = W;
    out.layers[l - 1].b = b;
  }
  return out;
}

WeightSet map_to_universe(const WeightSet& model, const PermSet& map) {
  return apply_perm(model, transpose(map));
}

// ---------------------------------------------------------------------------
// Pairwise Frank-Wolfe

namespace {

// P_l with identity at l = 0 and l = L.
const Eigen::MatrixXd& perm_at(const PermSet& p, int l, int L,
                               const std::vector<Eigen::MatrixXd>& ends) {
  if (l == 0) return ends[0];
  if (l == L) return ends[1];
  return p.P[l - 1];
}

std::vector<Eigen::MatrixXd> end_identities(const ArchSpec& a) {
  return {Eigen::MatrixXd::Identity(a.widths.front(), a.widths.front()),
          Eigen::MatrixXd::Identity(a.widths.back(), a.widths.back())};
}

PermSet mix(const PermSet& P, const PermSet& Pi, double alpha) {
  PermSet out;
  for (size_t i = 0; i < P.P.size(); ++i)
    out.P.push_back((1.0 - alpha) * P.P[i] + alpha * Pi.P[i]);
  return out;
}

bool converged(double before, double after, double tol) {
  return std::abs(after - before) <= tol * std::abs(before);
}

}  // namespace

double pairwise_objective(const WeightSet& A, const WeightSet& B,
                          const PermSet& p) {
  check_compatible(A, B);
  check_permset(A, p);
  const int L = A.arch.num_layers();
  auto ends = end_identities(A.arch);
  double f = 0.0;
  for (int l = 1; l <= L; ++l) {
    const Eigen::MatrixXd& Pl = perm_at(p, l, L, ends);
    const Eigen::MatrixXd& Pp = perm_at(p, l - 1, L, ends);
    const Layer& a = A.layers[l - 1];
    const Layer& b = B.layers[l - 1];
    f += (a.W.array() * (Pl * b.W * Pp.transpose()).array()).sum();
    if (a.b.size()) f += a.b.dot(Pl * b.b);
  }
  return f;
}

std::vector<Eigen::MatrixXd> pairwise_gradient(const WeightSet& A,
                                               const WeightSet& B,
                                               const PermSet& p) {
  check_compatible(A, B);
  check_permset(A, p);
  const int L = A.arch.num_layers();
  auto ends = end_identities(A.arch);
  std::vector<Eigen::MatrixXd> g;
  for (int l = 1; l < L; ++l) {
    const Layer& a = A.layers[l - 1];
    const Layer& b = B.layers[l - 1];
    const Layer& an = A.layers[l];
    const Layer& bn = B.layers[l];
    Eigen::MatrixXd G = a.W * perm_at(p, l - 1, L, ends) * b.W.transpose();
    if (a.b.size()) G += a.b * b.b.transpose();
    G += an.W.transpose() * perm_at(p, l + 1, L, ends) * bn.W;
    g.push_back(std::move(G));
  }
  return g;
}

FwResult fw_pairwise(const WeightSet& A, const WeightSet& B,
                     const FwOptions& opt) {
  check_compatible(A, B);
  FwResult res;
  PermSet P = identity_perms(A.arch);
  double f = pairwise_objective(A, B, P);
  res.trace.push_back(f);
  for (int it = 0; it < opt.max_iter && !P.P.empty(); ++it) {
    std::vector<Eigen::MatrixXd> grad = pairwise_gradient(A, B, P);
    PermSet Pi;
    for (const auto& G : grad) Pi.P.push_back(perm_matrix(lap_max(G)));
    double best_f = f;
    int best_k = 0;
    for (int k = 1; k <= 100; ++k) {
      double fk = pairwise_objective(A, B, mix(P, Pi, k / 100.0));
      if (fk > best_f) {
        best_f = fk;
        best_k = k;
      }
    }
    if (best_k > 0) P = mix(P, Pi, best_k / 100.0);
    res.trace.push_back(best_f);
    res.iterations = it + 1;
    bool done = converged(f, best_f, opt.tol);
    f = best_f;
    if (done) break;
  }
  res.perms = harden(P);
  res.final_objective = pairwise_objective(A, B, res.perms);
  return res;
}

// ---------------------------------------------------------------------------
// n-way Frank-Wolfe

namespace {

struct UniverseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

// P_l^T W_l P_{l-1} and P_l^T b_l for every layer of one model.
std::vector<UniverseLayer> to_universe(const WeightSet& w, const PermSet& p) {
  const int L = w.arch.num_layers();
  auto ends = end_identities(w.arch);
  std::vector<UniverseLayer> out(L);
  for (int l = 1; l <= L; ++l) {
    const Eigen::MatrixXd& Pl = perm_at(p, l, L, ends);
    const Eigen::MatrixXd& Pp = perm_at(p, l - 1, L, ends);
    out[l - 1].W = Pl.transpose() * w.layers[l - 1].W * Pp;
    if (w.layers[l - 1].b.size())
      out[l - 1].b = Pl.transpose() * w.layers[l - 1].b;
  }
  return out;
}

void check_models(const std::vector<WeightSet>& models) {
  require(models.size() >= 2, Status::kInvalidArgument,
          "need at least two models");
  for (const auto& m : models) check_compatible(models[0], m);
}

}  // namespace

double multi_objective(const std::vector<WeightSet>& models,
                       const std::vector<PermSet>& maps) {
  check_models(models);
  require(maps.size() == models.size(), Status::kInvalidArgument,
          "one map per model required");
  const size_t n = models.size();
  std::vector<std::vector<UniverseLayer>> U(n);
  for (size_t p = 0; p < n; ++p) U[p] = to_universe(models[p], maps[p]);
  double f = 0.0;
  for (size_t p = 0; p < n; ++p) {
    for (size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      for (size_t l = 0; l < U[p].size(); ++l) {
        f += (U[p][l].W.array() * U[q][l].W.array()).sum();
        if (U[p][l].b.size()) f += U[p][l].b.dot(U[q][l].b);
      }
    }
  }
  return f;
}

std::vector<Eigen::MatrixXd> multi_gradient(const std::vector<WeightSet>& models,
                                            const std::vector<PermSet>& maps,
                                            size_t a) {
  check_models(models);
  const size_t n = models.size();
  const WeightSet& A = models[a];
  const int L = A.arch.num_layers();
  auto ends = end_identities(A.arch);
  const PermSet& PA = maps[a];
  std::vector<Eigen::MatrixXd> grad;
  for (int l = 1; l < L; ++l) {
    const Eigen::Index d = A.arch.widths[l];
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(d, d);
    for (size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      const WeightSet& B = models[b];
      const PermSet& PB = maps[b];
      const Layer& la = A.layers[l - 1];
      const Layer& lb = B.layers[l - 1];
      const Layer& na = A.layers[l];
      const Layer& nb = B.layers[l];
      const Eigen::MatrixXd& PAprev = perm_at(PA, l - 1, L, ends);
      const Eigen::MatrixXd& PBprev = perm_at(PB, l - 1, L, ends);
      const Eigen::MatrixXd& PAnext = perm_at(PA, l + 1, L, ends);
      const Eigen::MatrixXd& PBnext = perm_at(PB, l + 1, L, ends);
      const Eigen::MatrixXd& PBl = PB.P[l - 1];
      Eigen::MatrixXd r = la.W * PAprev * PBprev.transpose() * lb.W.transpose() * PBl;
      if (la.b.size()) r += la.b * lb.b.transpose() * PBl;
      Eigen::MatrixXd c = na.W.transpose() * PAnext * PBnext.transpose() * nb.W * PBl;
      rows += r;
      cols += c;
    }
    grad.push_back(2.0 * (rows + cols));
  }
  return grad;
}

PermSet UniverseMaps::pairwise(size_t p, size_t q) const {
  return compose(maps.at(p), transpose(maps.at(q)));
}

FwMultiResult fw_multi(const std::vector<WeightSet>& models,
                       const FwOptions& opt) {
  check_models(models);
  const size_t n = models.size();
  std::vector<PermSet> P(n, identity_perms(models[0].arch));
  FwMultiResult res;
  double f = multi_objective(models, P);
  res.trace.push_back(f);
  for (int it = 0; it < opt.max_iter && !P[0].P.empty(); ++it) {
    // Model 0 anchors the universe frame.
    std::vector<PermSet> Pi(n);
    Pi[0] = P[0];
    for (size_t a = 1; a < n; ++a)
      for (const auto& G : multi_gradient(models, P, a))
        Pi[a].P.push_back(perm_matrix(lap_max(G)));
    auto mixed = [&](double alpha) {
      std::vector<PermSet> out(n);
      for (size_t a = 0; a < n; ++a) out[a] = mix(P[a], Pi[a], alpha);
      return out;
    };
    double best_f = f;
    int best_k = 0;
    for (int k = 1; k <= 100; ++k) {
      double fk = multi_objective(models, mixed(k / 100.0));
      if (fk > best_f) {
        best_f = fk;
        best_k = k;
      }
    }
    if (best_k > 0) P = mixed(best_k / 100.0);
    res.trace.push_back(best_f);
    res.iterations = it + 1;
    bool done = converged(f, best_f, opt.tol);
    f = best_f;
    if (done) break;
  }
  for (auto& p : P) res.maps.maps.push_back(harden(p));
  res.final_objective = multi_objective(models, res.maps.maps);
  return res;
}

// ---------------------------------------------------------------------------
// Cycles and merging

double cycle_error(const PairwiseMapFn& pair,
                   const std::vector<WeightSet>& models,
                   const std::vector<size_t>& cycle) {
  require(cycle.size() >= 2 && cycle.front() == cycle.back(),
          Status::kInvalidArgument, "cycle must start and end at the same model");
  for (size_t c : cycle)
    require(c < models.size(), Status::kInvalidArgument, "cycle: bad model id");
  WeightSet w = models[cycle.front()];
  for (size_t k = 0; k + 1 < cycle.size(); ++k)
    w = apply_perm(w, pair(cycle[k + 1], cycle[k]));
  return norm2(w - models[cycle.front()]);
}

double cycle_error(const UniverseMaps& maps,
                   const std::vector<WeightSet>& models,
                   const std::vector<size_t>& cycle) {
  return cycle_error([&maps](size_t p, size_t q) { return maps.pairwise(p, q); },
                     models, cycle);
}

namespace {

WeightSet uniform_mean(const std::vector<WeightSet>& ws) {
  WeightSet sum = ws[0];
  for (size_t i = 1; i < ws.size(); ++i) sum += ws[i];
  sum *= 1.0 / static_cast<double>(ws.size());
  return sum;
}

}  // namespace

WeightSet c2m3_merge(const std::vector<WeightSet>& models,
                     const FwOptions& opt) {
  FwMultiResult r = fw_multi(models, opt);
  std::vector<WeightSet> uni;
  for (size_t p = 0; p < models.size(); ++p)
    uni.push_back(map_to_universe(models[p], r.maps.maps[p]));
  return uniform_mean(uni);
}

MergeManyResult merge_many(const std::vector<WeightSet>& models, int max_rounds,
                           uint64_t seed, const FwOptions& opt) {
  check_models(models);
  require(max_rounds >= 1, Status::kInvalidArgument, "max_rounds must be >= 1");
  std::vector<WeightSet> ws = models;
  const size_t n = ws.size();
  MergeManyResult res;
  for (int round = 0; round < max_rounds; ++round) {
    Rng rng(seed, static_cast<uint64_t>(round));
    bool changed = false;
    for (size_t i : rng.permutation(n)) {
      WeightSet others = WeightSet::zeros(ws[0].arch);
      for (size_t j = 0; j < n; ++j)
        if (j != i) others += ws[j];
      others *= 1.0 / static_cast<double>(n - 1);
      FwResult m = fw_pairwise(others, ws[i], opt);
      if (!is_identity(m.perms)) {
        changed = true;
        ws[i] = apply_perm(ws[i], m.perms);
      }
    }
    res.rounds = round + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }
  res.merged = uniform_mean(ws);
  return res;
}

PermSet activation_matching(const WeightSet& A, const WeightSet& B,
                            const Dataset& probe) {
  check_compatible(A, B);
  require(probe.size() > 0, Status::kInvalidArgument,
          "activation_matching: empty probe");
  ForwardCache ca, cb;
  mlp_forward(A, probe.X, &ca);
  mlp_forward(B, probe.X, &cb);
  PermSet p;
  for (int l = 1; l < A.arch.num_layers(); ++l) {
    Eigen::MatrixXd score = ca.acts[l].transpose() * cb.acts[l];
    p.P.push_back(perm_matrix(lap_max(score)));
  }
  return p;
}

namespace {

void column_stats(const Eigen::MatrixXd& Z, Eigen::VectorXd& mean,
                  Eigen::VectorXd& sd) {
  const double n = static_cast<double>(Z.rows());
  mean = Z.colwise().sum().transpose() / n;
  sd.resize(Z.cols());
  for (Eigen::Index c = 0; c < Z.cols(); ++c)
    sd[c] = std::sqrt((Z.col(c).array() - mean[c]).square().sum() / n);
}

}  // namespace

RepairResult repair(const WeightSet& merged,
                    const std::vector<WeightSet>& endpoints,
                    const std::vector<double>& weights, const Dataset& probe) {
  require(!endpoints.empty() && endpoints.size() == weights.size(),
          Status::kInvalidArgument, "repair: one weight per endpoint");
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(std::abs(wsum - 1.0) <= 1e-9, Status::kInvalidArgument,
          "repair: weights must sum to 1");
  require(merged.arch.has_bias, Status::kInvalidArgument,
          "repair: the bias shift needs an arch with biases");
  require(probe.size() > 0, Status::kInvalidArgument, "repair: empty probe");
  for (const auto& e : endpoints) check_compatible(merged, e);

  std::vector<ForwardCache> ec(endpoints.size());
  for (size_t e = 0; e < endpoints.size(); ++e)
    mlp_forward(endpoints[e], probe.X, &ec[e]);

  RepairResult res;
  res.weights = merged;
  const int L = merged.arch.num_layers();
  for (int l = 1; l < L; ++l) {
    const Eigen::Index d = merged.arch.widths[l];
    Eigen::VectorXd target_mean = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd target_sd = Eigen::VectorXd::Zero(d);
    std::vector<char> dead(static_cast<size_t>(d), 0);
    for (size_t e = 0; e < endpoints.size(); ++e) {
      Eigen::VectorXd m, s;
      column_stats(ec[e].pre[l], m, s);
      target_mean += weights[e] * m;
      target_sd += weights[e] * s;
      for (Eigen::Index i = 0; i < d; ++i)
        if (s[i] == 0.0) dead[static_cast<size_t>(i)] = 1;
    }
    ForwardCache mc;
    mlp_forward(res.weights, probe.X, &mc);
    Eigen::VectorXd m, s;
    column_stats(mc.pre[l], m, s);
    Layer& layer = res.weights.layers[l - 1];
    for (Eigen::Index i = 0; i < d; ++i) {
      double scale = 1.0;
      if (dead[static_cast<size_t>(i)] || s[i] == 0.0) {
        res.flagged.emplace_back(l, static_cast<int>(i));
      } else {
        scale = target_sd[i] / s[i];
      }
      layer.W.row(i) *= scale;
      layer.b[i] = scale * (layer.b[i] - m[i]) + target_mean[i];
    }
  }
  return res;
}

BarrierResult loss_barrier(const WeightSet& A, const WeightSet& B,
                           const Dataset& d, int grid_points) {
  check_compatible(A, B);
  require(grid_points >= 3, Status::kInvalidArgument,
          "loss_barrier: grid_points must be >= 3");
  BarrierResult res;
  WeightSet diff = B - A;
  double peak = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid_points; ++k) {
    double lam = static_cast<double>(k) / (grid_points - 1);
    WeightSet w;
    if (k == 0) {
      w = A;
    } else if (k == grid_points - 1) {
      w = B;
    } else {
      w = A + lam * diff;
    }
    EvalResult e = evaluate(w, d);
    res.curve.push_back({lam, e.mean_loss, e.accuracy});
    peak = std::max(peak, e.mean_loss);
  }
  res.barrier = peak - 0.5 * (res.curve.front().loss + res.curve.back().loss);
  return res;
}

}  // namespace mergelab
