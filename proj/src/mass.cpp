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

#include "mergelab/mass.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mergelab/error.hpp"
#include "mergelab/taskvec.hpp"

namespace mergelab {

void RouterConfig::validate() const {
  require(layer >= 0, Status::kInvalidArgument, "router: layer must be >= 0");
  require(eta > 0.0 && eta < 1.0, Status::kInvalidArgument, "router: eta must be in (0, 1)");
  require(top_k >= 1, Status::kInvalidArgument, "router: top_k must be >= 1");
  require(epsilon > 0.0 && epsilon <= 1.0, Status::kInvalidArgument,
          "router: epsilon must be in (0, 1]");
  require(temperature > 0.0 && std::isfinite(temperature), Status::kInvalidArgument,
          "router: temperature must be positive");
  require(std::isfinite(alpha), Status::kInvalidArgument, "router: alpha must be finite");
}

WeightSet backbone_of(const WeightSet& w) {
  require(w.arch.num_layers() >= 2, Status::kInvalidArgument,
          "backbone_of: need at least 2 layers");
  WeightSet b;
  b.arch = w.arch;
  b.arch.widths.pop_back();
  b.layers.assign(w.layers.begin(), w.layers.end() - 1);
  return b;
}

ClassifierHead head_of(const WeightSet& w) {
  require(!w.layers.empty(), Status::kInvalidArgument, "head_of: empty network");
  ClassifierHead h{w.layers.back().W, w.layers.back().b, {}};
  for (int c = 0; c < h.num_classes(); ++c) h.classes.push_back(std::to_string(c));
  return h;
}

std::vector<Eigen::MatrixXd> backbone_inputs(const WeightSet& backbone, const Eigen::MatrixXd& X) {
  require(X.cols() == backbone.arch.input_dim(), Status::kShapeMismatch,
          "backbone_inputs: input width mismatch");
  std::vector<Eigen::MatrixXd> acts{X};
  for (const auto& l : backbone.layers) {
    Eigen::MatrixXd z = acts.back() * l.W.transpose();
    if (l.b.size()) z.rowwise() += l.b.transpose();
    acts.push_back(activate(backbone.arch.activation, z));
  }
  return acts;
}

Eigen::MatrixXd head_logits(const ClassifierHead& h, const Eigen::MatrixXd& features) {
  require(features.cols() == h.W.cols(), Status::kShapeMismatch,
          "head_logits: feature width mismatch");
  Eigen::MatrixXd z = features * h.W.transpose();
  if (h.b.size()) z.rowwise() += h.b.transpose();
  return z;
}

std::vector<int> redundancy_filter(const std::vector<TaskVector>& deltas, double epsilon) {
  require(!deltas.empty(), Status::kInvalidArgument, "redundancy_filter: no deltas");
  std::vector<Eigen::VectorXd> flat;
  for (const auto& d : deltas) {
    check_compatible(deltas[0], d);
    flat.push_back(flatten(d));
  }
  std::vector<int> accepted{0};
  for (size_t i = 1; i < flat.size(); ++i) {
    bool keep = true;
    for (int j : accepted)
      if (cosine_sim(flat[i], flat[static_cast<size_t>(j)]).value >= epsilon) keep = false;
    if (keep) accepted.push_back(static_cast<int>(i));
  }
  return accepted;
}

FixedMerge fixed_merge(const WeightSet& theta_pre, const std::vector<TaskVector>& deltas,
                       const RouterConfig& cfg) {
  cfg.validate();
  FixedMerge out;
  out.accepted = redundancy_filter(deltas, cfg.epsilon);
  std::vector<TaskVector> kept;
  for (int i : out.accepted) kept.push_back(deltas[static_cast<size_t>(i)]);
  out.theta_mt = tsv_merge(theta_pre, kept, cfg.alpha);
  out.bundle = truncate(svd_bundle(kept), tsv_ranks(theta_pre.arch, static_cast<int>(kept.size())));
  return out;
}

int routing_layer(const ArchSpec& backbone, const RouterConfig& cfg) {
  const int L = backbone.num_layers();
  const int layer = cfg.layer == 0 ? L : cfg.layer;
  require(layer >= 1 && layer <= L, Status::kInvalidArgument,
          "router: layer " + std::to_string(layer) + " outside 1.." + std::to_string(L));
  return layer;
}

Eigen::VectorXd residuals(const Eigen::VectorXd& z, const SvdBundle& bundle, int layer) {
  require(layer >= 1 && layer <= static_cast<int>(bundle.layers.size()),
          Status::kInvalidArgument, "residuals: layer out of range");
  const auto& parts = bundle.layers[static_cast<size_t>(layer - 1)];
  require(!parts.empty(), Status::kInvalidArgument, "residuals: empty bundle");
  Eigen::VectorXd r(static_cast<Eigen::Index>(parts.size()));
  for (size_t i = 0; i < parts.size(); ++i) {
    const Eigen::MatrixXd& V = parts[i].V;
    require(V.rows() == z.size(), Status::kShapeMismatch, "residuals: dimension mismatch");
    r[static_cast<Eigen::Index>(i)] = (z - V * (V.transpose() * z)).norm();
  }
  return r;
}

Route route(const Eigen::VectorXd& r, const RouterConfig& cfg) {
  require(r.size() > 0, Status::kInvalidArgument, "route: no residuals");
  const Eigen::Index n = r.size();
  Eigen::VectorXd logits = -r / cfg.temperature;
  Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
  w /= w.sum();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return r[a] < r[b]; });
  Route out{w, {}};
  for (int i : order) {
    if (static_cast<int>(out.selected.size()) == cfg.top_k) break;
    if (w[i] >= cfg.eta) out.selected.push_back(i);
  }
  if (out.selected.empty()) out.selected.push_back(order[0]);
  std::sort(out.selected.begin(), out.selected.end());
  return out;
}

int map_route_check(const Eigen::VectorXd& z, const SvdBundle& bundle, int layer) {
  Eigen::VectorXd r = residuals(z, bundle, layer);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < r.size(); ++i)
    if (r[i] < r[best]) best = i;
  return static_cast<int>(best);
}

MassModel build_mass(const WeightSet& pretrained, const std::vector<WeightSet>& experts,
                     const RouterConfig& cfg) {
  require(!experts.empty(), Status::kInvalidArgument, "build_mass: no experts");
  MassModel m;
  m.cfg = cfg;
  m.theta_pre = backbone_of(pretrained);
  std::vector<TaskVector> deltas;
  for (const auto& e : experts) {
    check_compatible(backbone_of(e), m.theta_pre);
    deltas.push_back(task_vector(backbone_of(e), m.theta_pre));
    m.heads.push_back(head_of(e));
  }
  m.merged = fixed_merge(m.theta_pre, deltas, cfg);
  routing_layer(m.theta_pre.arch, cfg);
  return m;
}

WeightSet adaptive_backbone(const MassModel& m, const std::vector<int>& selected) {
  WeightSet w = m.theta_pre;
  for (int j : selected) w += m.cfg.alpha * reconstruct(m.merged.bundle, j);
  return w;
}

namespace {

void predict_with(const MassModel& m, const Eigen::VectorXd& features, MassPrediction& p) {
  double best = -std::numeric_limits<double>::infinity();
  for (int t : p.selected) {
    require(t >= 0 && t < static_cast<int>(m.heads.size()), Status::kNotFound,
            "adaptive_infer: no head for task " + std::to_string(t));
    Eigen::VectorXd z = head_logits(m.heads[static_cast<size_t>(t)], features.transpose()).row(0);
    for (Eigen::Index c = 0; c < z.size(); ++c)
      if (z[c] > best || p.head < 0) {
        best = z[c];
        p.head = t;
        p.cls = static_cast<int>(c);
      }
  }
}

std::vector<int> to_task_ids(const MassModel& m, const std::vector<int>& idx) {
  std::vector<int> ids;
  for (int j : idx) ids.push_back(m.merged.accepted[static_cast<size_t>(j)]);
  return ids;
}

}  // namespace

MassPrediction adaptive_infer(const Eigen::VectorXd& x, const MassModel& m) {
  return adaptive_infer_batch(x.transpose(), m).front();
}

std::vector<MassPrediction> adaptive_infer_batch(const Eigen::MatrixXd& X, const MassModel& m) {
  require(X.rows() >= 1, Status::kInvalidArgument, "adaptive_infer: empty batch");
  const int layer = routing_layer(m.theta_pre.arch, m.cfg);
  Eigen::MatrixXd Z = backbone_inputs(m.merged.theta_mt, X)[static_cast<size_t>(layer - 1)];
  Eigen::VectorXd r = Eigen::VectorXd::Zero(m.merged.bundle.num_tasks());
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    r += residuals(Z.row(i).transpose(), m.merged.bundle, layer);
  r /= static_cast<double>(Z.rows());
  Route rt = route(r, m.cfg);
  Eigen::MatrixXd F = backbone_inputs(adaptive_backbone(m, rt.selected), X).back();
  std::vector<MassPrediction> out;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    MassPrediction p;
    p.residuals = r;
    p.weights = rt.weights;
    p.selected = to_task_ids(m, rt.selected);
    predict_with(m, F.row(i).transpose(), p);
    out.push_back(std::move(p));
  }
  return out;
}

double routing_accuracy(const MassModel& m, const std::vector<Dataset>& tasks, int layer) {
  size_t hit = 0, total = 0;
  for (size_t t = 0; t < tasks.size(); ++t) {
    Eigen::MatrixXd Z = backbone_inputs(m.merged.theta_mt, tasks[t].X)[static_cast<size_t>(layer - 1)];
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      int j = map_route_check(Z.row(i).transpose(), m.merged.bundle, layer);
      if (m.merged.accepted[static_cast<size_t>(j)] == static_cast<int>(t)) ++hit;
      ++total;
    }
  }
  require(total > 0, Status::kInvalidArgument, "routing_accuracy: no samples");
  return static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<SweepRow> routing_sweep(const MassModel& m, const std::vector<Dataset>& tasks) {
  std::vector<SweepRow> rows;
  for (int l = 1; l <= m.theta_pre.arch.num_layers(); ++l)
    rows.push_back({l, routing_accuracy(m, tasks, l)});
  return rows;
}

nlohmann::json prediction_to_json(const MassPrediction& p, const MassModel& m) {
  nlohmann::json j;
  j["residuals"] = std::vector<double>(p.residuals.data(), p.residuals.data() + p.residuals.size());
  j["weights"] = std::vector<double>(p.weights.data(), p.weights.data() + p.weights.size());
  j["tasks"] = m.merged.accepted;
  j["selected"] = p.selected;
  j["head"] = p.head;
  j["class"] = p.cls;
  return j;
}

}  // namespace mergelab
