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

#include "mergelab/tsv.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mergelab/error.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {

LayerSvd layer_svd(const Eigen::MatrixXd& delta) {
  require(delta.allFinite(), Status::kInvalidArgument, "layer_svd: non-finite input");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  LayerSvd out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
  const double smax = out.S.size() ? out.S[0] : 0.0;
  for (Eigen::Index j = 0; j < out.S.size(); ++j) {
    if (out.S[j] < 1e-12 * smax) out.S[j] = 0.0;
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < out.U.rows(); ++i)
      if (std::abs(out.U(i, j)) > std::abs(out.U(best, j))) best = i;
    if (out.U.rows() && out.U(best, j) < 0) {
      out.U.col(j) *= -1.0;
      out.V.col(j) *= -1.0;
    }
  }
  return out;
}

LayerSvd truncate(const LayerSvd& s, int k) {
  require(k >= 1 && k <= s.rank(), Status::kInvalidArgument,
          "truncate: k out of range [1, " + std::to_string(s.rank()) + "]");
  return {s.U.leftCols(k), s.S.head(k), s.V.leftCols(k)};
}

Eigen::MatrixXd reconstruct(const LayerSvd& s) {
  return s.U * s.S.asDiagonal() * s.V.transpose();
}

SvdBundle svd_bundle(const std::vector<TaskVector>& taus) {
  require(!taus.empty(), Status::kInvalidArgument, "svd_bundle: no task vectors");
  for (const auto& t : taus) check_compatible(taus[0], t);
  SvdBundle b;
  b.arch = taus[0].arch;
  const size_t L = b.arch.num_layers();
  b.layers.resize(L);
  b.biases.resize(taus.size());
  for (size_t l = 0; l < L; ++l) {
    for (const auto& t : taus) b.layers[l].push_back(layer_svd(t.layers[l].W));
    b.ranks.push_back(b.layers[l][0].rank());
  }
  for (size_t t = 0; t < taus.size(); ++t)
    for (size_t l = 0; l < L; ++l) b.biases[t].push_back(taus[t].layers[l].b);
  return b;
}

SvdBundle truncate(const SvdBundle& b, const std::vector<int>& ks) {
  require(ks.size() == b.layers.size(), Status::kInvalidArgument,
          "truncate: one rank per layer required");
  SvdBundle out = b;
  for (size_t l = 0; l < b.layers.size(); ++l) {
    for (size_t t = 0; t < b.layers[l].size(); ++t)
      out.layers[l][t] = truncate(b.layers[l][t], ks[l]);
    out.ranks[l] = ks[l];
  }
  return out;
}

SvdBundle truncate(const SvdBundle& b, int k) {
  return truncate(b, std::vector<int>(b.layers.size(), k));
}

TaskVector reconstruct(const SvdBundle& b, int task_id) {
  require(task_id >= 0 && task_id < b.num_tasks(), Status::kNotFound,
          "reconstruct: unknown task id " + std::to_string(task_id));
  TaskVector out = WeightSet::zeros(b.arch);
  for (size_t l = 0; l < b.layers.size(); ++l) {
    out.layers[l].W = reconstruct(b.layers[l][static_cast<size_t>(task_id)]);
    out.layers[l].b = b.biases[static_cast<size_t>(task_id)][l];
  }
  return out;
}

size_t stored_params(const SvdBundle& b) {
  size_t n = 0;
  for (const auto& layer : b.layers)
    for (const auto& s : layer)
      n += static_cast<size_t>(s.U.size() + s.S.size() + s.V.size());
  for (const auto& bt : b.biases)
    for (const auto& v : bt) n += static_cast<size_t>(v.size());
  return n;
}

namespace {

Tensor matrix_tensor(const std::string& name, const Eigen::MatrixXd& m) {
  Tensor t;
  t.name = name;
  t.dims = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(m(r, c));
  return t;
}

Tensor vector_tensor(const std::string& name, const Eigen::VectorXd& v) {
  Tensor t;
  t.name = name;
  t.dims = {static_cast<uint64_t>(v.size())};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

const Tensor& find_tensor(const MwsFile& f, const std::string& name) {
  for (const auto& t : f.tensors)
    if (t.name == name) return t;
  fail(Status::kFormatError, "bundle: missing tensor " + name);
}

Eigen::MatrixXd tensor_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  require(t.dims.size() == 2 && t.dims[0] == static_cast<uint64_t>(rows) &&
              t.dims[1] == static_cast<uint64_t>(cols),
          Status::kShapeMismatch, "bundle: tensor " + t.name + " has the wrong shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = t.values[static_cast<size_t>(r * cols + c)];
  return m;
}

Eigen::VectorXd tensor_vector(const Tensor& t, Eigen::Index n) {
  require(t.dims.size() == 1 && t.dims[0] == static_cast<uint64_t>(n),
          Status::kShapeMismatch, "bundle: tensor " + t.name + " has the wrong shape");
  return Eigen::Map<const Eigen::VectorXd>(t.values.data(), n);
}

std::string layer_tag(size_t l) { return ".L" + std::to_string(l + 1); }
std::string task_tag(size_t t) { return ".T" + std::to_string(t); }

}  // namespace

MwsFile bundle_to_mws(const SvdBundle& b) {
  MwsFile f;
  f.manifest["arch"] = arch_to_json(b.arch);
  bool uniform = std::all_of(b.ranks.begin(), b.ranks.end(),
                             [&](int k) { return k == b.ranks[0]; });
  if (uniform && !b.ranks.empty()) {
    f.manifest["rank"] = b.ranks[0];
  } else {
    f.manifest["rank"] = b.ranks;
  }
  f.manifest["tasks"] = b.num_tasks();
  const size_t T = static_cast<size_t>(b.num_tasks());
  for (size_t l = 0; l < b.layers.size(); ++l) {
    for (size_t t = 0; t < T; ++t) {
      const LayerSvd& s = b.layers[l][t];
      f.tensors.push_back(matrix_tensor("U" + layer_tag(l) + task_tag(t), s.U));
      f.tensors.push_back(vector_tensor("S" + layer_tag(l) + task_tag(t), s.S));
      f.tensors.push_back(matrix_tensor("V" + layer_tag(l) + task_tag(t), s.V));
    }
    if (!b.arch.has_bias) continue;
    if (T == 1) {
      f.tensors.push_back(vector_tensor("b" + layer_tag(l), b.biases[0][l]));
    } else {
      for (size_t t = 0; t < T; ++t)
        f.tensors.push_back(vector_tensor("b" + layer_tag(l) + task_tag(t), b.biases[t][l]));
    }
  }
  return f;
}

SvdBundle bundle_from_mws(const MwsFile& f) {
  SvdBundle b;
  try {
    b.arch = arch_from_json(f.manifest.at("arch"));
    const auto& rank = f.manifest.at("rank");
    const size_t L = static_cast<size_t>(b.arch.num_layers());
    if (rank.is_array()) {
      b.ranks = rank.get<std::vector<int>>();
    } else {
      b.ranks.assign(L, rank.get<int>());
    }
    require(b.ranks.size() == L, Status::kShapeMismatch, "bundle: rank list length");
    const int T = f.manifest.at("tasks").get<int>();
    require(T >= 1, Status::kFormatError, "bundle: tasks must be >= 1");
    b.layers.resize(L);
    b.biases.assign(static_cast<size_t>(T), {});
    for (size_t l = 0; l < L; ++l) {
      const Eigen::Index rows = b.arch.widths[l + 1], cols = b.arch.widths[l];
      const Eigen::Index k = b.ranks[l];
      require(k >= 1 && k <= std::min(rows, cols), Status::kShapeMismatch,
              "bundle: rank out of range");
      for (size_t t = 0; t < static_cast<size_t>(T); ++t) {
        LayerSvd s;
        s.U = tensor_matrix(find_tensor(f, "U" + layer_tag(l) + task_tag(t)), rows, k);
        s.S = tensor_vector(find_tensor(f, "S" + layer_tag(l) + task_tag(t)), k);
        s.V = tensor_matrix(find_tensor(f, "V" + layer_tag(l) + task_tag(t)), cols, k);
        b.layers[l].push_back(std::move(s));
        std::string bname = "b" + layer_tag(l) + (T == 1 ? "" : task_tag(t));
        b.biases[t].push_back(b.arch.has_bias ? tensor_vector(find_tensor(f, bname), rows)
                                              : Eigen::VectorXd());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Status::kFormatError, std::string("bundle manifest: ") + e.what());
  }
  return b;
}

Eigen::MatrixXd procrustes(const Eigen::MatrixXd& X) {
  require(X.allFinite(), Status::kInvalidArgument, "procrustes: non-finite input");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

Eigen::MatrixXd whiten(const Eigen::MatrixXd& X) {
  require(X.allFinite(), Status::kInvalidArgument, "whiten: non-finite input");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(X.transpose() * X);
  Eigen::VectorXd lam = eig.eigenvalues().cwiseAbs().cwiseMax(1e-12);
  Eigen::MatrixXd Q = eig.eigenvectors();
  return X * (Q * lam.cwiseSqrt().cwiseInverse().asDiagonal() * Q.transpose());
}

namespace {

struct Concat {
  Eigen::MatrixXd U, V;
  Eigen::VectorXd S;
};

Concat concatenate(const std::vector<LayerSvd>& parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.rank();
  Concat c;
  c.U.resize(parts[0].U.rows(), total);
  c.V.resize(parts[0].V.rows(), total);
  c.S.resize(total);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    c.U.middleCols(off, p.rank()) = p.U;
    c.V.middleCols(off, p.rank()) = p.V;
    c.S.segment(off, p.rank()) = p.S;
    off += p.rank();
  }
  return c;
}

}  // namespace

double sti_layer(const std::vector<Eigen::MatrixXd>& deltas, int k) {
  require(deltas.size() >= 2, Status::kInvalidArgument, "sti: need at least 2 tasks");
  require(k >= 1, Status::kInvalidArgument, "sti: k must be >= 1");
  std::vector<LayerSvd> parts;
  for (const auto& d : deltas) {
    require(d.rows() == deltas[0].rows() && d.cols() == deltas[0].cols(),
            Status::kShapeMismatch, "sti: task matrices differ in shape");
    LayerSvd s = layer_svd(d);
    parts.push_back(truncate(s, std::min(k, s.rank())));
  }
  Concat c = concatenate(parts);
  const Eigen::Index n = c.S.size();
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd M = (c.U.transpose() * c.U - I) * c.S.asDiagonal() *
                      (c.V.transpose() * c.V - I);
  return M.cwiseAbs().sum();
}

StiReport sti(const std::vector<TaskVector>& taus, int k) {
  require(taus.size() >= 2, Status::kInvalidArgument, "sti: need at least 2 tasks");
  for (const auto& t : taus) check_compatible(taus[0], t);
  StiReport r;
  for (size_t l = 0; l < taus[0].layers.size(); ++l) {
    std::vector<Eigen::MatrixXd> deltas;
    for (const auto& t : taus) deltas.push_back(t.layers[l].W);
    r.per_layer.push_back(sti_layer(deltas, k));
    r.total += r.per_layer.back();
  }
  return r;
}

std::vector<int> tsv_ranks(const ArchSpec& arch, int T) {
  require(T >= 1, Status::kInvalidArgument, "tsv_ranks: T must be >= 1");
  std::vector<int> ks;
  for (int l = 1; l <= arch.num_layers(); ++l)
    ks.push_back(std::max(1, std::min(arch.widths[l], arch.widths[l - 1]) / T));
  return ks;
}

WeightSet tsv_merge(const WeightSet& theta_pre, const std::vector<TaskVector>& taus,
                    double alpha, TsvVariant variant) {
  require(!taus.empty(), Status::kInvalidArgument, "tsv_merge: no task vectors");
  for (const auto& t : taus) check_compatible(theta_pre, t);
  const int T = static_cast<int>(taus.size());
  const std::vector<int> ks = tsv_ranks(theta_pre.arch, T);
  WeightSet out = theta_pre;
  for (size_t l = 0; l < theta_pre.layers.size(); ++l) {
    std::vector<LayerSvd> parts;
    for (const auto& t : taus) {
      LayerSvd s = layer_svd(t.layers[l].W);
      parts.push_back(variant.low_rank ? truncate(s, std::min(ks[l], s.rank())) : s);
    }
    Eigen::MatrixXd M;
    if (variant.orthogonalize) {
      Concat c = concatenate(parts);
      M = procrustes(c.U) * c.S.asDiagonal() * procrustes(c.V).transpose();
    } else {
      M = Eigen::MatrixXd::Zero(theta_pre.layers[l].W.rows(), theta_pre.layers[l].W.cols());
      for (const auto& p : parts) M += reconstruct(p);
    }
    out.layers[l].W += alpha * M;
    if (theta_pre.arch.has_bias) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(theta_pre.layers[l].b.size());
      for (const auto& t : taus) sum += t.layers[l].b;
      out.layers[l].b += (alpha / T) * sum;
    }
  }
  return out;
}

SvdBundle tsv_compress(const TaskVector& tau, const std::vector<int>& ks) {
  for (int k : ks) require(k >= 1, Status::kInvalidArgument, "tsv_compress: k must be >= 1");
  return truncate(svd_bundle({tau}), ks);
}

SvdBundle tsv_compress(const TaskVector& tau, int k) {
  return tsv_compress(tau, std::vector<int>(static_cast<size_t>(tau.arch.num_layers()), k));
}

StorageReport storage_params(const ArchSpec& arch, const std::vector<int>& k_prime) {
  arch.validate();
  require(static_cast<int>(k_prime.size()) == arch.num_layers(), Status::kInvalidArgument,
          "storage_params: one k' per layer required");
  StorageReport r;
  r.compresses = true;
  for (int l = 1; l <= arch.num_layers(); ++l) {
    const size_t d = static_cast<size_t>(arch.widths[l]);
    const size_t m = static_cast<size_t>(arch.widths[l - 1]);
    const int k = k_prime[static_cast<size_t>(l - 1)];
    require(k >= 1, Status::kInvalidArgument, "storage_params: k' must be >= 1");
    const size_t kk = static_cast<size_t>(k);
    const size_t bias = arch.has_bias ? d : 0;
    r.params_nn += d * m + bias;
    r.params_tsv += d * kk + kk + kk * m + bias;
    const double bound = static_cast<double>(d * m) / static_cast<double>(d + m + 1);
    r.k_bound.push_back(bound);
    if (!(k < bound)) r.compresses = false;
  }
  return r;
}

StorageReport storage_params(const ArchSpec& arch, int k_prime) {
  return storage_params(arch, std::vector<int>(static_cast<size_t>(arch.num_layers()), k_prime));
}

namespace {

Eigen::MatrixXd random_orthogonal(int n, Rng& rng) {
  Eigen::MatrixXd G(n, n);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  return Q;
}

}  // namespace

double procrustes_k_bound(int T, int n) {
  return n * (T - 2.0 * std::sqrt(static_cast<double>(T))) / T;
}

ProcrustesCompare procrustes_error_compare(int T, int n, int k, int trials,
                                           uint64_t seed, bool enforce_hypothesis) {
  require(T > 4, Status::kInvalidArgument, "procrustes_error_compare: requires T > 4");
  require(n >= 1 && k >= 1 && k <= n && trials >= 1, Status::kInvalidArgument,
          "procrustes_error_compare: need n >= 1, 1 <= k <= n, trials >= 1");
  ProcrustesCompare out;
  const double bound = procrustes_k_bound(T, n);
  out.hypothesis = k <= bound;
  if (enforce_hypothesis && !out.hypothesis)
    fail(Status::kInvalidArgument,
         "procrustes_error_compare: k = " + std::to_string(k) +
             " exceeds n(T - 2 sqrt T)/T = " + std::to_string(bound) +
             "; the inequality is not guaranteed");
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(seed, static_cast<uint64_t>(trial));
    Eigen::MatrixXd U(n, n * T), Uh(n, k * T);
    for (int i = 0; i < T; ++i) {
      Eigen::MatrixXd Q = random_orthogonal(n, rng);
      U.middleCols(i * n, n) = Q;
      Uh.middleCols(i * k, k) = Q.leftCols(k);
    }
    double full = (U - procrustes(U)).norm();
    double trunc = (Uh - procrustes(Uh)).norm();
    out.full_errors.push_back(full);
    out.trunc_errors.push_back(trunc);
    if (full >= trunc) ++out.holds;
  }
  out.theorem_holds = out.holds == trials;
  return out;
}

double procrustes_equal_error(int T, int n, uint64_t seed) {
  require(T >= 1 && n >= 1, Status::kInvalidArgument, "procrustes_equal_error: bad sizes");
  Rng rng(seed);
  Eigen::MatrixXd Q = random_orthogonal(n, rng);
  Eigen::MatrixXd U(n, n * T);
  for (int i = 0; i < T; ++i) U.middleCols(i * n, n) = Q;
  return (U - procrustes(U)).norm();
}

}  // namespace mergelab
