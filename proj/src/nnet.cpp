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

#include "mergelab/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mergelab/error.hpp"
#include "mergelab/rng.hpp"

namespace mergelab {

void Dataset::validate() const {
  require(!y.empty(), Status::kInvalidArgument, "dataset is empty");
  require(static_cast<size_t>(X.rows()) == y.size(), Status::kShapeMismatch,
          "dataset: feature rows do not match label count");
  require(num_classes >= 1, Status::kInvalidArgument,
          "dataset: num_classes must be >= 1");
  for (int label : y)
    require(label >= 0 && label < num_classes, Status::kInvalidArgument,
            "dataset: label out of range");
  require(X.allFinite(), Status::kNumerical, "dataset: non-finite feature");
}

Dataset Dataset::subset(const std::vector<size_t>& rows) const {
  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  d.num_classes = num_classes;
  d.name = name;
  for (size_t i = 0; i < rows.size(); ++i) {
    d.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    d.y.push_back(y[rows[i]]);
  }
  return d;
}

Dataset make_dataset(const DatasetSpec& spec) {
  require(spec.classes >= 1 && spec.dims >= 1 && spec.samples >= 1,
          Status::kInvalidArgument, "make_dataset: counts must be positive");
  const int C = spec.classes, D = spec.dims;
  Eigen::MatrixXd frame(D, C);
  Rng frng(spec.seed, 0);
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < D; ++r) frame(r, c) = frng.normal();
  if (C <= D) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(frame);
    frame = qr.householderQ() * Eigen::MatrixXd::Identity(D, C);
  } else {
    for (int c = 0; c < C; ++c) frame.col(c).normalize();
  }
  Eigen::MatrixXd means = frame * (spec.separation / std::sqrt(2.0));

  Dataset d;
  d.name = spec.name;
  d.num_classes = C;
  d.X.resize(spec.samples, D);
  d.y.resize(spec.samples);
  Rng srng(spec.seed, 1 + spec.split);
  for (int i = 0; i < spec.samples; ++i) {
    int c = i % C;
    d.y[i] = c;
    for (int r = 0; r < D; ++r) d.X(i, r) = means(r, c) + srng.normal();
  }
  return d;
}

void save_csv(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Status::kIoError, "cannot open '" + path + "' for writing");
  for (Eigen::Index c = 0; c < d.X.cols(); ++c) os << 'f' << c << ',';
  os << "label\n";
  char buf[64];
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    for (Eigen::Index c = 0; c < d.X.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", d.X(i, c));
      os << buf << ',';
    }
    os << d.y[static_cast<size_t>(i)] << '\n';
  }
  if (!os) fail(Status::kIoError, "write failed for '" + path + "'");
}

Dataset load_csv(const std::string& path, int num_classes) {
  std::ifstream is(path);
  if (!is) fail(Status::kIoError, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line))
    fail(Status::kFormatError, "csv '" + path + "' has no header");
  int cols = static_cast<int>(std::count(line.begin(), line.end(), ','));
  require(cols >= 1, Status::kFormatError, "csv header needs features and label");
  std::vector<double> vals;
  std::vector<int> labels;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int k = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      if (k < cols) {
        double v = std::strtod(cell.c_str(), &end);
        require(end && *end == '\0' && !cell.empty(), Status::kFormatError,
                "csv: bad number '" + cell + "'");
        vals.push_back(v);
      } else {
        long v = std::strtol(cell.c_str(), &end, 10);
        require(end && *end == '\0' && !cell.empty(), Status::kFormatError,
                "csv: bad label '" + cell + "'");
        labels.push_back(static_cast<int>(v));
      }
      ++k;
    }
    require(k == cols + 1, Status::kFormatError, "csv: ragged row");
  }
  Dataset d;
  d.name = path;
  d.X.resize(static_cast<Eigen::Index>(labels.size()), cols);
  for (size_t i = 0; i < labels.size(); ++i)
    for (int c = 0; c < cols; ++c)
      d.X(static_cast<Eigen::Index>(i), c) = vals[i * cols + c];
  d.y = labels;
  int mx = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  d.num_classes = num_classes > 0 ? num_classes : mx + 1;
  d.validate();
  return d;
}

WeightSet init_weights(const ArchSpec& arch, uint64_t seed) {
  WeightSet w = WeightSet::zeros(arch);
  Rng rng(seed);
  for (auto& l : w.layers) {
    double a = std::sqrt(6.0 / static_cast<double>(l.W.rows() + l.W.cols()));
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c)
        l.W(r, c) = rng.uniform(-a, a);
  }
  return w;
}

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kSigmoid:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  return z;
}

Eigen::MatrixXd activate_grad(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::kRelu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::kTanh: {
      Eigen::ArrayXXd t = z.array().tanh();
      return (1.0 - t * t).matrix();
    }
    case Activation::kSigmoid: {
      Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
      return (s * (1.0 - s)).matrix();
    }
  }
  return z;
}

Eigen::MatrixXd mlp_forward(const WeightSet& w, const Eigen::MatrixXd& X,
                            ForwardCache* cache) {
  require(X.cols() == w.arch.input_dim(), Status::kShapeMismatch,
          "forward: input width does not match arch");
  const int L = w.arch.num_layers();
  if (cache) {
    cache->pre.assign(L + 1, Eigen::MatrixXd());
    cache->acts.assign(L + 1, Eigen::MatrixXd());
    cache->acts[0] = X;
  }
  Eigen::MatrixXd a = X;
  for (int l = 1; l <= L; ++l) {
    const Layer& layer = w.layers[l - 1];
    Eigen::MatrixXd z = a * layer.W.transpose();
    if (layer.b.size()) z.rowwise() += layer.b.transpose();
    if (l < L) {
      a = activate(w.arch.activation, z);
    } else {
      a = z;
    }
    if (cache) {
      cache->pre[l] = std::move(z);
      cache->acts[l] = a;
    }
  }
  require(a.allFinite(), Status::kNumerical,
          "forward: non-finite output (diverged weights)");
  return a;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

namespace {

double rows_cross_entropy(const Eigen::MatrixXd& logits,
                          const std::vector<int>& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, y[static_cast<size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

LossGrad loss_and_grad(const WeightSet& w, const Dataset& data) {
  require(data.size() > 0, Status::kInvalidArgument,
          "loss_and_grad: empty dataset");
  require(data.num_classes == w.arch.output_dim(), Status::kShapeMismatch,
          "loss_and_grad: class count does not match output width");
  // Reduce over rows in canonical order so results ignore row order.
  std::vector<size_t> order = canonical_row_order(data);
  bool sorted = std::is_sorted(order.begin(), order.end());
  Dataset reordered;
  if (!sorted) reordered = data.subset(order);
  const Dataset& d = sorted ? data : reordered;
  ForwardCache cache;
  Eigen::MatrixXd logits = mlp_forward(w, d.X, &cache);
  const double n = static_cast<double>(d.size());
  LossGrad out;
  out.loss = rows_cross_entropy(logits, d.y);
  out.grad = WeightSet::zeros(w.arch);

  Eigen::MatrixXd dz = softmax_rows(logits);
  for (Eigen::Index i = 0; i < dz.rows(); ++i) dz(i, d.y[static_cast<size_t>(i)]) -= 1.0;
  dz /= n;
  const int L = w.arch.num_layers();
  for (int l = L; l >= 1; --l) {
    Layer& g = out.grad.layers[l - 1];
    g.W = dz.transpose() * cache.acts[l - 1];
    if (w.arch.has_bias) g.b = dz.colwise().sum().transpose();
    if (l > 1) {
      Eigen::MatrixXd da = dz * w.layers[l - 1].W;
      dz = da.cwiseProduct(activate_grad(w.arch.activation, cache.pre[l - 1]));
    }
  }
  return out;
}

double mean_loss(const WeightSet& w, const Dataset& d) {
  require(d.size() > 0, Status::kInvalidArgument, "mean_loss: empty dataset");
  return rows_cross_entropy(mlp_forward(w, d.X), d.y);
}

TaskVector hvp(const GradFn& grad, const WeightSet& w, const TaskVector& v) {
  check_compatible(w, v);
  const double h = 1e-4 / (1.0 + norm2(v));
  WeightSet plus = w, minus = w;
  for (size_t i = 0; i < w.layers.size(); ++i) {
    plus.layers[i].W += h * v.layers[i].W;
    plus.layers[i].b += h * v.layers[i].b;
    minus.layers[i].W -= h * v.layers[i].W;
    minus.layers[i].b -= h * v.layers[i].b;
  }
  TaskVector out = grad(plus);
  out -= grad(minus);
  out *= 1.0 / (2.0 * h);
  require(all_finite(out), Status::kNumerical, "hvp: non-finite intermediate");
  return out;
}

TaskVector hvp(const WeightSet& w, const Dataset& d, const TaskVector& v) {
  return hvp([&d](const WeightSet& x) { return loss_and_grad(x, d).grad; }, w,
             v);
}

void TrainConfig::validate() const {
  require(eta >= 0.0 && std::isfinite(eta), Status::kInvalidArgument,
          "train: eta must be finite and non-negative");
  require(epochs >= 1, Status::kInvalidArgument, "train: epochs must be >= 1");
  if (mode == TrainMode::kSgd)
    require(batch_size >= 1, Status::kInvalidArgument,
            "train: batch_size must be >= 1");
}

std::vector<size_t> canonical_row_order(const Dataset& d) {
  std::vector<size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&d](size_t a, size_t b) {
    if (d.y[a] != d.y[b]) return d.y[a] < d.y[b];
    for (Eigen::Index c = 0; c < d.X.cols(); ++c) {
      double xa = d.X(static_cast<Eigen::Index>(a), c);
      double xb = d.X(static_cast<Eigen::Index>(b), c);
      if (xa != xb) return xa < xb;
    }
    return false;
  });
  return idx;
}

TrainResult train(const WeightSet& w0, const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  w0.validate();
  d.validate();
  const Dataset& data = d;
  TrainResult res;
  res.trajectory.push_back(w0);
  WeightSet w = w0;
  auto step = [&](const Dataset& batch) -> bool {
    LossGrad lg;
    try {
      lg = loss_and_grad(w, batch);
    } catch (const Error& e) {
      if (e.code() == Status::kNumerical) return false;
      throw;
    }
    if (!std::isfinite(lg.loss)) return false;
    lg.grad *= cfg.eta;
    w -= lg.grad;
    return true;
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    bool ok = true;
    if (cfg.mode == TrainMode::kFullBatchGd) {
      ok = step(data);
    } else {
      Rng rng(cfg.seed, static_cast<uint64_t>(epoch));
      std::vector<size_t> order = rng.permutation(data.size());
      for (size_t s = 0; ok && s < order.size();
           s += static_cast<size_t>(cfg.batch_size)) {
        size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch_size));
        std::vector<size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(s),
                                 order.begin() + static_cast<std::ptrdiff_t>(e));
        ok = step(data.subset(rows));
      }
    }
    if (!ok || !all_finite(w)) {
      res.diverged = true;
      return res;
    }
    res.trajectory.push_back(w);
  }
  return res;
}

std::vector<int> predict(const WeightSet& w, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd logits = mlp_forward(w, X);
  std::vector<int> out(static_cast<size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

EvalResult evaluate(const WeightSet& w, const Dataset& d) {
  require(d.size() > 0, Status::kInvalidArgument, "evaluate: empty dataset");
  Eigen::MatrixXd logits = mlp_forward(w, d.X);
  EvalResult r;
  size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    if (best == d.y[static_cast<size_t>(i)]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(d.size());
  r.mean_loss = rows_cross_entropy(logits, d.y);
  return r;
}

double normalized_accuracy(const std::vector<double>& merged,
                           const std::vector<double>& finetuned) {
  require(!merged.empty() && merged.size() == finetuned.size(),
          Status::kInvalidArgument,
          "normalized_accuracy: lists must be non-empty and equal length");
  double s = 0.0;
  for (size_t i = 0; i < merged.size(); ++i) {
    require(finetuned[i] > 0.0, Status::kInvalidArgument,
            "normalized_accuracy: zero finetuned accuracy");
    s += merged[i] / finetuned[i];
  }
  return s / static_cast<double>(merged.size());
}

}  // namespace mergelab
