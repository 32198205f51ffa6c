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

#include "runners.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mergelab/align.hpp"
#include "mergelab/error.hpp"
#include "mergelab/evolve.hpp"
#include "mergelab/mass.hpp"
#include "mergelab/merge_ops.hpp"
#include "mergelab/nnet.hpp"
#include "mergelab/rng.hpp"
#include "mergelab/taskvec.hpp"
#include "mergelab/tsv.hpp"
#include "mergelab/weightspace.hpp"

namespace mergelab {

const char* const kVersion = "0.1.0";

std::string format_double(double v, int digits) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void dump_rec(const json& j, int indent, int depth, std::string& out) {
  const std::string pad = indent > 0 ? std::string(static_cast<size_t>(indent * (depth + 1)), ' ') : "";
  const std::string close_pad = indent > 0 ? std::string(static_cast<size_t>(indent * depth), ' ') : "";
  const char* nl = indent > 0 ? "\n" : "";
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      out += nl;
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) {
          out += ',';
          out += nl;
        }
        first = false;
        out += pad + json(it.key()).dump() + (indent > 0 ? ": " : ":");
        dump_rec(it.value(), indent, depth + 1, out);
      }
      out += nl + close_pad + '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += '[';
      out += nl;
      for (size_t i = 0; i < j.size(); ++i) {
        if (i) {
          out += ',';
          out += nl;
        }
        out += pad;
        dump_rec(j[i], indent, depth + 1, out);
      }
      out += nl + close_pad + ']';
      return;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) {
        out += "null";
        return;
      }
      std::string s = format_double(v, 17);
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      out += s;
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_json(const nlohmann::json& j, int indent) {
  std::string out;
  dump_rec(j, indent, 0, out);
  out += '\n';
  return out;
}

std::string config_hash(const nlohmann::json& config) {
  const std::string s = dump_json(config, 0);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

[[noreturn]] void invalid(const std::string& m) { fail(Status::kInvalidArgument, m); }

class Cfg {
 public:
  Cfg(json j, std::string where) : j_(std::move(j)), where_(std::move(where)) {
    if (!j_.is_object()) invalid(where_ + ": expected an object");
  }
  bool has(const std::string& k) const {
    used_.insert(k);
    return j_.contains(k);
  }
  template <typename T>
  T get(const std::string& k, const T& def) const {
    used_.insert(k);
    return j_.contains(k) ? as<T>(k) : def;
  }
  template <typename T>
  T need(const std::string& k) const {
    used_.insert(k);
    if (!j_.contains(k)) invalid(where_ + ": missing '" + k + "'");
    return as<T>(k);
  }
  const json& raw(const std::string& k) const {
    used_.insert(k);
    if (!j_.contains(k)) invalid(where_ + ": missing '" + k + "'");
    return j_.at(k);
  }
  Cfg sub(const std::string& k) const { return Cfg(raw(k), where_ + "." + k); }
  std::string where(const std::string& k) const { return where_ + "." + k; }
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) invalid(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  template <typename T>
  T as(const std::string& k) const {
    try {
      return j_.at(k).get<T>();
    } catch (const json::exception&) {
      invalid(where_ + "." + k + ": wrong type");
    }
  }
  json j_;
  std::string where_;
  mutable std::set<std::string> used_;
};

std::string need_file(const std::string& p) {
  if (!fs::is_regular_file(fs::u8path(p))) fail(Status::kNotFound, "no such file: '" + p + "'");
  return p;
}

WeightSet load_model(const std::string& p) { return load_weights(need_file(p)); }

Dataset load_data(const json& j, uint64_t seed, const std::string& where, uint64_t split_offset = 0) {
  if (j.is_string()) return load_csv(need_file(j.get<std::string>()));
  Cfg c(j, where);
  if (c.has("csv")) {
    const auto p = c.need<std::string>("csv");
    const int k = c.get("classes", 0);
    c.done();
    return load_csv(need_file(p), k);
  }
  DatasetSpec s;
  s.classes = c.get("classes", 3);
  s.dims = c.get("dims", 16);
  s.samples = c.get("samples", 300);
  s.seed = c.get<uint64_t>("seed", seed);
  s.separation = c.get("separation", 3.0);
  s.split = c.get<uint64_t>("split", 0) + split_offset;
  s.name = c.get<std::string>("name", "blobs");
  c.done();
  return make_dataset(s);
}

std::vector<Dataset> load_data_list(const Cfg& c, const std::string& key, uint64_t seed) {
  const json& arr = c.raw(key);
  if (!arr.is_array() || arr.empty()) invalid(c.where(key) + ": expected a non-empty array");
  std::vector<Dataset> out;
  for (size_t i = 0; i < arr.size(); ++i)
    out.push_back(load_data(arr[i], derive_seed(seed, 100 + i), c.where(key) + "[" + std::to_string(i) + "]"));
  return out;
}

ArchSpec parse_arch(const Cfg& c) {
  ArchSpec a;
  a.widths = c.need<std::vector<int>>("widths");
  a.activation = parse_activation(c.get<std::string>("activation", "relu"));
  a.has_bias = c.get("has_bias", true);
  c.done();
  a.validate();
  return a;
}

TrainConfig parse_train(const Cfg& c, uint64_t seed) {
  TrainConfig t;
  t.eta = c.get("eta", 0.1);
  t.epochs = c.get("epochs", 30);
  const auto mode = c.get<std::string>("mode", "gd");
  if (mode == "gd") t.mode = TrainMode::kFullBatchGd;
  else if (mode == "sgd") t.mode = TrainMode::kSgd;
  else invalid("train.mode: expected 'gd' or 'sgd'");
  t.batch_size = c.get("batch_size", 32);
  t.seed = seed;
  c.done();
  t.validate();
  return t;
}

struct Ctx {
  fs::path out;
  int threads = 1;
  std::vector<std::string> artifacts;

  void text(const std::string& name, const std::string& body) {
    std::ofstream os(out / name, std::ios::binary | std::ios::trunc);
    if (!os) fail(Status::kIoError, "cannot write '" + (out / name).string() + "'");
    os << body;
    if (!os) fail(Status::kIoError, "write failed: '" + (out / name).string() + "'");
    artifacts.push_back(name);
  }
  void model(const std::string& name, const WeightSet& w) {
    save_weights(w, (out / name).string());
    artifacts.push_back(name);
  }
  void mws(const std::string& name, const MwsFile& f) {
    write_mws((out / name).string(), f);
    artifacts.push_back(name);
  }
  void csv(const std::string& name, const Dataset& d) {
    save_csv(d, (out / name).string());
    artifacts.push_back(name);
  }
};

using Plan = std::function<json(Ctx&)>;

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string s;
  for (const auto& c : cells) {
    if (!s.empty()) s += ',';
    s += c;
  }
  return s + '\n';
}

std::string f17(double v) { return format_double(v, 17); }

// Either {"desk": {...}} or {"pretrained": path, "models": [paths]}.
struct ModelSource {
  bool desk = false;
  ArchSpec arch;
  uint64_t init_seed = 0;
  std::vector<Dataset> train_sets;
  TrainConfig ft;
  WeightSet pre;
  std::vector<WeightSet> models;
  std::vector<Dataset> tests;  // desk held-out sets

  void materialize(Ctx& ctx) {
    if (!desk) return;
    pre = init_weights(arch, init_seed);
    ctx.model("pretrained.mws", pre);
    for (size_t t = 0; t < train_sets.size(); ++t) {
      TrainConfig c = ft;
      c.seed = derive_seed(ft.seed, t);
      TrainResult r = train(pre, train_sets[t], c);
      if (r.diverged) fail(Status::kDiverged, "fine-tuning diverged on task " + std::to_string(t));
      models.push_back(r.trajectory.back());
      ctx.model("expert_" + std::to_string(t) + ".mws", models.back());
    }
  }
};

ModelSource parse_models(const Cfg& c, uint64_t seed, bool need_pre) {
  ModelSource m;
  if (c.has("desk")) {
    Cfg d = c.sub("desk");
    m.desk = true;
    m.arch = parse_arch(d.sub("arch"));
    m.init_seed = d.get<uint64_t>("init_seed", derive_seed(seed, 1));
    const json& tasks = d.raw("tasks");
    if (!tasks.is_array() || tasks.size() < 1) invalid("desk.tasks: expected a non-empty array");
    const int test_samples = d.get("test_samples", 200);
    for (size_t t = 0; t < tasks.size(); ++t) {
      const std::string w = "desk.tasks[" + std::to_string(t) + "]";
      if (!tasks[t].is_object() || tasks[t].contains("csv"))
        invalid(w + ": desk tasks are generated blob specs");
      m.train_sets.push_back(load_data(tasks[t], derive_seed(seed, 100 + t), w));
      json test = tasks[t];
      test["samples"] = test_samples;
      m.tests.push_back(load_data(test, derive_seed(seed, 100 + t), w, 1));
      if (m.train_sets.back().X.cols() != m.arch.widths.front() ||
          m.train_sets.back().num_classes != m.arch.widths.back())
        fail(Status::kShapeMismatch, w + ": data does not fit desk.arch");
    }
    m.ft = parse_train(d.has("finetune") ? d.sub("finetune") : Cfg(json::object(), "desk.finetune"),
                       derive_seed(seed, 2));
    d.done();
    if (c.has("pretrained") || c.has("models")) invalid("give either desk or pretrained/models");
    return m;
  }
  if (need_pre || c.has("pretrained")) m.pre = load_model(c.need<std::string>("pretrained"));
  for (const auto& p : c.need<std::vector<std::string>>("models")) m.models.push_back(load_model(p));
  if (m.models.empty()) invalid("models: expected at least one path");
  for (const auto& w : m.models) check_compatible(m.models[0], w);
  if (need_pre || c.has("pretrained")) check_compatible(m.pre, m.models[0]);
  return m;
}

std::vector<Dataset> eval_sets(const Cfg& c, const ModelSource& m, uint64_t seed, bool required) {
  if (c.has("tasks")) return load_data_list(c, "tasks", derive_seed(seed, 3));
  if (m.desk) return m.tests;
  if (required) invalid("missing 'tasks'");
  return {};
}

// ---------------------------------------------------------------- train

Plan plan_train(const Cfg& c, uint64_t seed) {
  std::optional<WeightSet> init;
  ArchSpec arch;
  if (c.has("init")) init = load_model(c.need<std::string>("init"));
  if (c.has("arch")) arch = parse_arch(c.sub("arch"));
  else if (init) arch = init->arch;
  else invalid("train: need 'arch' or 'init'");
  if (init && !(init->arch == arch)) fail(Status::kShapeMismatch, "train: init does not match arch");
  Dataset data = load_data(c.raw("data"), derive_seed(seed, 100), "data");
  std::optional<Dataset> held;
  if (c.has("eval")) held = load_data(c.raw("eval"), derive_seed(seed, 100), "eval", c.raw("eval").is_object() && !c.raw("eval").contains("split") ? 1 : 0);
  TrainConfig tc = parse_train(c.has("train") ? c.sub("train") : Cfg(json::object(), "train"),
                               derive_seed(seed, 2));
  if (data.X.cols() != arch.widths.front() || data.num_classes != arch.widths.back())
    fail(Status::kShapeMismatch, "train: data does not fit arch");
  return [=](Ctx& ctx) {
    WeightSet w0 = init ? *init : init_weights(arch, derive_seed(seed, 1));
    TrainResult r = train(w0, data, tc);
    ctx.model("init.mws", w0);
    ctx.model("model.mws", r.trajectory.back());
    ctx.csv("data.csv", data);
    std::string curve = "epoch,loss,accuracy\n";
    for (size_t e = 0; e < r.trajectory.size(); ++e) {
      EvalResult ev = evaluate(r.trajectory[e], data);
      curve += csv_row({std::to_string(e), f17(ev.mean_loss), f17(ev.accuracy)});
    }
    ctx.text("curve.csv", curve);
    EvalResult fin = evaluate(r.trajectory.back(), data);
    json rep{{"epochs", tc.epochs}, {"diverged", r.diverged},
             {"train_loss", fin.mean_loss}, {"train_accuracy", fin.accuracy}};
    if (held) {
      ctx.csv("eval.csv", *held);
      EvalResult ev = evaluate(r.trajectory.back(), *held);
      rep["eval_loss"] = ev.mean_loss;
      rep["eval_accuracy"] = ev.accuracy;
    }
    return rep;
  };
}

// ---------------------------------------------------------------- align

Plan plan_align(const Cfg& c, uint64_t seed) {
  std::vector<WeightSet> models;
  for (const auto& p : c.need<std::vector<std::string>>("models")) models.push_back(load_model(p));
  if (models.size() < 2) invalid("align: need at least 2 models");
  for (const auto& w : models) check_compatible(models[0], w);
  const auto method = c.get<std::string>("method", "fw_multi");
  if (method != "fw_pairwise" && method != "fw_multi" && method != "activation" && method != "merge_many")
    invalid("align.method: expected fw_pairwise, fw_multi, activation or merge_many");
  FwOptions opt;
  opt.tol = c.get("tol", opt.tol);
  opt.max_iter = c.get("max_iter", opt.max_iter);
  const int rounds = c.get("max_rounds", 10);
  const bool do_repair = c.get("repair", false);
  std::optional<Dataset> probe;
  if (c.has("probe")) probe = load_data(c.raw("probe"), derive_seed(seed, 100), "probe");
  if ((method == "activation" || do_repair) && !probe) invalid("align: this method needs 'probe'");
  return [=](Ctx& ctx) {
    const size_t n = models.size();
    std::vector<WeightSet> aligned{models[0]};
    std::string trace = "model,iter,objective\n";
    json rep{{"method", method}, {"models", n}};
    std::vector<PermSet> to_ref(n, identity_perms(models[0].arch));
    if (method == "fw_multi") {
      FwMultiResult r = fw_multi(models, opt);
      aligned.clear();
      for (size_t i = 0; i < n; ++i) aligned.push_back(map_to_universe(models[i], r.maps.maps[i]));
      for (size_t it = 0; it < r.trace.size(); ++it) trace += csv_row({"all", std::to_string(it), f17(r.trace[it])});
      rep["final_objective"] = r.final_objective;
      rep["iterations"] = r.iterations;
      json cyc = json::array();
      for (size_t a = 0; a < n; ++a)
        for (size_t b = a + 1; b < n; ++b)
          for (size_t d = b + 1; d < n; ++d)
            cyc.push_back({{"cycle", {a, b, d, a}}, {"error", cycle_error(r.maps, models, {a, b, d, a})}});
      rep["cycle_errors"] = cyc;
    } else if (method == "merge_many") {
      MergeManyResult r = merge_many(models, rounds, derive_seed(seed, 4), opt);
      rep["rounds"] = r.rounds;
      rep["converged"] = r.converged;
      aligned.clear();
      ctx.model("merged.mws", r.merged);
      return rep;
    } else {
      json objs = json::array();
      for (size_t i = 1; i < n; ++i) {
        PermSet p;
        if (method == "fw_pairwise") {
          FwResult r = fw_pairwise(models[0], models[i], opt);
          p = r.perms;
          for (size_t it = 0; it < r.trace.size(); ++it)
            trace += csv_row({std::to_string(i), std::to_string(it), f17(r.trace[it])});
          objs.push_back(r.final_objective);
        } else {
          p = activation_matching(models[0], models[i], *probe);
          objs.push_back(pairwise_objective(models[0], models[i], p));
        }
        aligned.push_back(apply_perm(models[i], p));
      }
      rep["final_objective"] = objs;
    }
    for (size_t i = 0; i < aligned.size(); ++i) ctx.model("aligned_" + std::to_string(i) + ".mws", aligned[i]);
    if (method != "activation") ctx.text("trace.csv", trace);
    WeightSet merged = weight_average(aligned);
    if (do_repair) {
      RepairResult r = repair(merged, aligned, std::vector<double>(n, 1.0 / static_cast<double>(n)), *probe);
      merged = r.weights;
      rep["repair_flagged"] = r.flagged.size();
    }
    ctx.model("merged.mws", merged);
    if (probe) {
      rep["probe_accuracy_merged"] = evaluate(merged, *probe).accuracy;
      json acc = json::array();
      for (const auto& w : models) acc.push_back(evaluate(w, *probe).accuracy);
      rep["probe_accuracy_models"] = acc;
    }
    return rep;
  };
}

// ---------------------------------------------------------------- merge

Plan plan_merge(const Cfg& c, uint64_t seed) {
  std::optional<MergeRecipe> recipe;
  std::optional<TsvVariant> tsv;
  double alpha = 1.0;
  if (c.has("recipe")) {
    json rj = c.raw("recipe");
    if (rj.is_object() && !rj.contains("seed") && rj.contains("method") && rj["method"].is_string() &&
        is_stochastic(parse_merge_method(rj["method"].get<std::string>())))
      rj["seed"] = derive_seed(seed, 5);
    recipe = recipe_from_json(rj);
  } else if (c.has("tsv")) {
    Cfg t = c.sub("tsv");
    TsvVariant v;
    v.low_rank = t.get("low_rank", true);
    v.orthogonalize = t.get("orthogonalize", true);
    alpha = t.get("alpha", 1.0);
    t.done();
    tsv = v;
  } else {
    invalid("merge: need 'recipe' or 'tsv'");
  }
  const bool need_pre = tsv || (recipe->method != MergeMethod::kAverage && recipe->method != MergeMethod::kSlerp);
  ModelSource src = parse_models(c, seed, need_pre);
  if (recipe && !src.desk) recipe->validate(src.models.size());
  if (recipe && src.desk) recipe->validate(src.train_sets.size());
  std::vector<Dataset> tasks = eval_sets(c, src, seed, false);
  return [=](Ctx& ctx) mutable {
    src.materialize(ctx);
    WeightSet pre = need_pre ? src.pre : src.models[0];
    WeightSet merged;
    json rep;
    if (recipe) {
      merged = apply_recipe(*recipe, pre, src.models);
      rep["recipe"] = recipe_to_json(*recipe);
    } else {
      std::vector<TaskVector> taus;
      for (const auto& w : src.models) taus.push_back(task_vector(w, pre));
      merged = tsv_merge(pre, taus, alpha, *tsv);
      rep["tsv"] = {{"alpha", alpha}, {"low_rank", tsv->low_rank}, {"orthogonalize", tsv->orthogonalize}};
    }
    ctx.model("merged.mws", merged);
    if (!tasks.empty()) {
      std::vector<double> acc, ft;
      for (size_t t = 0; t < tasks.size(); ++t) {
        acc.push_back(evaluate(merged, tasks[t]).accuracy);
        if (t < src.models.size()) ft.push_back(evaluate(src.models[t], tasks[t]).accuracy);
      }
      rep["accuracy"] = acc;
      if (ft.size() == acc.size()) {
        rep["expert_accuracy"] = ft;
        rep["normalized_accuracy"] = normalized_accuracy(acc, ft);
      }
    }
    return rep;
  };
}

// ---------------------------------------------------------------- barrier

Plan plan_barrier(const Cfg& c, uint64_t seed) {
  WeightSet a = load_model(c.need<std::string>("a"));
  WeightSet b = load_model(c.need<std::string>("b"));
  check_compatible(a, b);
  Dataset d = load_data(c.raw("data"), derive_seed(seed, 100), "data");
  const int grid = c.get("grid", 21);
  if (grid < 2) invalid("barrier.grid must be >= 2");
  return [=](Ctx& ctx) {
    BarrierResult r = loss_barrier(a, b, d, grid);
    std::string curve = "lambda,loss,accuracy\n";
    for (const auto& p : r.curve)
      curve += csv_row({format_double(p.lambda, 12), format_double(p.loss, 12), format_double(p.accuracy, 12)});
    ctx.text("curve.csv", curve);
    ctx.text("barrier.csv", "barrier\n" + f17(r.barrier) + "\n");
    return json{{"barrier", r.barrier}, {"grid", grid}};
  };
}

// ---------------------------------------------------------------- taskvec-verify

Plan plan_taskvec(const Cfg& c, uint64_t seed) {
  ArchSpec arch;
  if (c.has("arch")) {
    arch = parse_arch(c.sub("arch"));
  } else {
    arch.widths = {8, 16, 3};
    arch.activation = Activation::kSigmoid;
  }
  std::vector<Dataset> tasks;
  if (c.has("tasks")) {
    tasks = load_data_list(c, "tasks", derive_seed(seed, 3));
  } else {
    for (uint64_t t = 0; t < 3; ++t)
      tasks.push_back(make_dataset({arch.widths.back(), arch.widths.front(), 60, derive_seed(seed, 100 + t), 3.0, 0, "blobs"}));
  }
  for (const auto& d : tasks)
    if (d.X.cols() != arch.widths.front() || d.num_classes > arch.widths.back())
      fail(Status::kShapeMismatch, "taskvec-verify: task data does not fit arch");
  const double alpha = c.get("alpha", 1.0 / static_cast<double>(tasks.size()));
  const double eta = c.get("eta", 0.01);
  const int k = c.get("k", 1);
  const auto etas = c.get<std::vector<double>>("etas", {1e-2, 5e-3, 2.5e-3});
  if (k < 1) invalid("taskvec-verify.k must be >= 1");
  if (!(eta > 0)) invalid("taskvec-verify.eta must be > 0");
  return [=](Ctx& ctx) {
    WeightSet pre = init_weights(arch, derive_seed(seed, 1));
    TrainConfig tc;
    tc.eta = eta;
    tc.epochs = k;
    std::vector<TaskVector> taus;
    bool gd_exact = true;
    for (const auto& d : tasks) {
      TrainResult r = train(pre, d, tc);
      if (k == 1) gd_exact = gd_exact && bit_equal(r.trajectory.back(), pre - eta * loss_and_grad(pre, d).grad);
      taus.push_back(task_vector(r.trajectory.back(), pre));
    }
    WeightSet ta = task_arithmetic(pre, taus, alpha);
    WeightSet mt = multitask_trajectory(tasks, pre, alpha, eta, k).back();
    const double gap = max_abs(ta - mt);
    const double tol = 1e-13 * (1.0 + max_abs(mt));
    json rep{{"k", k}, {"eta", eta}, {"alpha", alpha}, {"tasks", tasks.size()},
             {"max_abs_gap", gap}};
    if (k == 1) {
      rep["tolerance"] = tol;
      rep["gd_step_exact"] = gd_exact;
      rep["pass"] = gap <= tol && gd_exact;
    } else {
      GapCheck g = second_order_gap_check(tasks, pre, alpha, etas, k);
      std::string csv = "eta,gap_norm,residual_norm\n";
      for (size_t i = 0; i < g.etas.size(); ++i)
        csv += csv_row({f17(g.etas[i]), f17(g.gap_norms[i]), f17(g.residual_norms[i])});
      ctx.text("gap.csv", csv);
      rep["slope_gap"] = g.slope_gap;
      rep["slope_residual"] = g.slope_residual;
      rep["pass"] = g.pass;
    }
    return rep;
  };
}

// ---------------------------------------------------------------- tsv

Plan plan_tsv(const Cfg& c, uint64_t seed) {
  const auto op = c.get<std::string>("op", "merge");
  if (op != "merge" && op != "compress" && op != "sti") invalid("tsv.op: expected merge, compress or sti");
  ModelSource src = parse_models(c, seed, true);
  const int k = c.get("k", 0);
  const double alpha = c.get("alpha", 1.0);
  TsvVariant v;
  v.low_rank = c.get("low_rank", true);
  v.orthogonalize = c.get("orthogonalize", true);
  std::vector<Dataset> tasks = eval_sets(c, src, seed, false);
  if (op != "merge" && k < 0) invalid("tsv.k must be >= 0");
  return [=](Ctx& ctx) mutable {
    src.materialize(ctx);
    std::vector<TaskVector> taus;
    for (const auto& w : src.models) taus.push_back(task_vector(w, src.pre));
    const ArchSpec& arch = src.pre.arch;
    std::vector<int> ks;
    for (size_t l = 1; l < arch.widths.size(); ++l) {
      const int r = std::min(arch.widths[l - 1], arch.widths[l]);
      ks.push_back(k > 0 ? std::min(k, r) : std::max(1, r / 4));
    }
    const int kk = *std::min_element(ks.begin(), ks.end());
    json rep{{"op", op}, {"tasks", taus.size()}};
    if (op == "merge") {
      WeightSet merged = tsv_merge(src.pre, taus, alpha, v);
      ctx.model("merged.mws", merged);
      rep["alpha"] = alpha;
      rep["ranks"] = tsv_ranks(arch, static_cast<int>(taus.size()));
      if (!tasks.empty()) {
        std::vector<double> acc, ft;
        for (size_t t = 0; t < tasks.size() && t < src.models.size(); ++t) {
          acc.push_back(evaluate(merged, tasks[t]).accuracy);
          ft.push_back(evaluate(src.models[t], tasks[t]).accuracy);
        }
        rep["accuracy"] = acc;
        rep["expert_accuracy"] = ft;
        rep["normalized_accuracy"] = normalized_accuracy(acc, ft);
      }
    } else if (op == "compress") {
      StorageReport s = storage_params(arch, ks);
      rep["k"] = ks;
      rep["params_nn"] = s.params_nn;
      rep["params_tsv"] = s.params_tsv;
      rep["k_bound"] = s.k_bound;
      rep["compresses"] = s.compresses;
      json per = json::array();
      for (size_t t = 0; t < taus.size(); ++t) {
        SvdBundle b = tsv_compress(taus[t], ks);
        ctx.mws("bundle_" + std::to_string(t) + ".mws", bundle_to_mws(b));
        json e{{"task", t}, {"stored_params", stored_params(b)}};
        if (t < tasks.size()) {
          WeightSet w = src.pre + reconstruct(b, 0);
          const double a = evaluate(w, tasks[t]).accuracy, f = evaluate(src.models[t], tasks[t]).accuracy;
          e["accuracy"] = a;
          e["expert_accuracy"] = f;
          e["retained"] = f > 0 ? a / f : 0.0;
        }
        per.push_back(e);
      }
      rep["experts"] = per;
    } else {
      StiReport s = sti(taus, kk);
      rep["k"] = kk;
      rep["sti_per_layer"] = s.per_layer;
      rep["sti_total"] = s.total;
    }
    return rep;
  };
}

// ---------------------------------------------------------------- mass

Plan plan_mass(const Cfg& c, uint64_t seed) {
  ModelSource src = parse_models(c, seed, true);
  RouterConfig rc;
  if (c.has("router")) {
    Cfg r = c.sub("router");
    rc.layer = r.get("layer", rc.layer);
    rc.eta = r.get("eta", rc.eta);
    rc.top_k = r.get("top_k", rc.top_k);
    rc.epsilon = r.get("epsilon", rc.epsilon);
    rc.temperature = r.get("temperature", rc.temperature);
    rc.alpha = r.get("alpha", rc.alpha);
    r.done();
  }
  rc.validate();
  std::vector<Dataset> tasks = eval_sets(c, src, seed, true);
  const bool per_sample = c.get("per_sample", true);
  return [=](Ctx& ctx) mutable {
    src.materialize(ctx);
    if (tasks.size() != src.models.size()) fail(Status::kShapeMismatch, "mass: one eval set per expert");
    MassModel m = build_mass(src.pre, src.models, rc);
    json samples = json::array();
    std::vector<double> acc;
    for (size_t t = 0; t < tasks.size(); ++t) {
      auto preds = adaptive_infer_batch(tasks[t].X, m);
      size_t ok = 0;
      for (size_t i = 0; i < preds.size(); ++i) {
        ok += preds[i].head == static_cast<int>(t) && preds[i].cls == tasks[t].y[i];
        if (per_sample) {
          json p = prediction_to_json(preds[i], m);
          p["task"] = t;
          p["index"] = i;
          p["label"] = tasks[t].y[i];
          samples.push_back(p);
        }
      }
      acc.push_back(static_cast<double>(ok) / static_cast<double>(preds.size()));
    }
    if (per_sample) ctx.text("predictions.json", dump_json(json{{"samples", samples}}));
    std::string sweep = "layer,routing_accuracy\n";
    json sw = json::array();
    double best = 0.0;
    for (const auto& row : routing_sweep(m, tasks)) {
      sweep += csv_row({std::to_string(row.layer), f17(row.accuracy)});
      sw.push_back({{"layer", row.layer}, {"routing_accuracy", row.accuracy}});
      best = std::max(best, row.accuracy);
    }
    ctx.text("sweep.csv", sweep);
    return json{{"accepted_tasks", m.merged.accepted}, {"accuracy", acc},
                {"routing_layer", routing_layer(m.theta_pre.arch, rc)},
                {"sweep", sw}, {"best_routing_accuracy", best}};
  };
}

// ---------------------------------------------------------------- evolve

Plan plan_evolve(const Cfg& c, uint64_t seed) {
  ModelSource src = parse_models(c, seed, true);
  Merge3Config mc;
  mc.seed = seed;
  if (c.has("ga")) {
    Cfg g = c.sub("ga");
    mc.ga.pop = g.get("pop", mc.ga.pop);
    mc.ga.iters = g.get("iters", mc.ga.iters);
    mc.ga.eta_c = g.get("eta_c", mc.ga.eta_c);
    mc.ga.eta_m = g.get("eta_m", mc.ga.eta_m);
    mc.ga.mutation_rate = g.get("mutation_rate", mc.ga.mutation_rate);
    g.done();
  }
  mc.method = parse_merge_method(c.get<std::string>("method", "task_arithmetic"));
  mc.estimator = parse_estimator(c.get<std::string>("estimator", "gmp_irt"));
  mc.c = c.get("c", mc.c);
  mc.subset_size = c.get<size_t>("subset_size", mc.subset_size);
  mc.irt_dim = c.get("irt_dim", mc.irt_dim);
  mc.probes = c.get("probes", mc.probes);
  mc.irt_steps = c.get("irt_steps", mc.irt_steps);
  mc.multi_objective = c.get("multi_objective", false);
  const auto agg = c.get<std::string>("aggregate", "min");
  if (agg == "min") mc.aggregate = Aggregate::kMin;
  else if (agg == "mean") mc.aggregate = Aggregate::kMean;
  else invalid("evolve.aggregate: expected min or mean");
  if (mc.ga.pop < 2 || mc.ga.iters < 0) invalid("evolve.ga: need pop >= 2 and iters >= 0");
  if (mc.c > 1) invalid("evolve.c must be <= 1 (negative: fit it)");
  std::vector<Dataset> tasks = eval_sets(c, src, seed, true);
  return [=](Ctx& ctx) mutable {
    src.materialize(ctx);
    Merge3Config cfg = mc;
    cfg.ga.threads = ctx.threads;
    Merge3Report r = merge3_run(src.pre, src.models, tasks, cfg);
    ctx.model("best.mws", apply_recipe(r.recipe, src.pre, src.models));
    std::string hist = "gen,best_estimate\n";
    for (size_t g = 0; g < r.ga.history.size(); ++g) hist += csv_row({std::to_string(g), f17(r.ga.history[g])});
    if (!cfg.multi_objective) ctx.text("history.csv", hist);
    if (cfg.multi_objective) {
      std::string front = "index";
      for (size_t t = 0; t < tasks.size(); ++t) front += ",objective_" + std::to_string(t);
      front += '\n';
      for (size_t i = 0; i < r.nsga.front_objectives.size(); ++i) {
        front += std::to_string(i);
        for (double v : r.nsga.front_objectives[i]) front += ',' + f17(v);
        front += '\n';
      }
      ctx.text("front.csv", front);
    }
    json rep = merge3_to_json(r);
    rep["min_truth"] = min_over(r.truth);
    return rep;
  };
}

// ---------------------------------------------------------------- report

Plan plan_report(const Cfg& c, uint64_t) {
  const auto runs = c.need<std::vector<std::string>>("runs");
  if (runs.empty()) invalid("report.runs: expected at least one directory");
  std::vector<std::pair<json, json>> loaded;
  for (const auto& d : runs) {
    const fs::path dir = fs::u8path(d);
    const std::string mp = (dir / "manifest.json").string();
    need_file(mp);
    std::ifstream is(mp);
    json man, rep;
    try {
      man = json::parse(is);
      if (fs::is_regular_file(dir / "report.json")) {
        std::ifstream rs(dir / "report.json");
        rep = json::parse(rs);
      }
    } catch (const json::exception& e) {
      fail(Status::kFormatError, "report: cannot parse run '" + d + "': " + e.what());
    }
    loaded.emplace_back(man, rep);
  }
  return [=](Ctx& ctx) {
    std::string csv = "run,command,status,seed,config_hash\n";
    json all = json::array();
    for (size_t i = 0; i < loaded.size(); ++i) {
      const json& m = loaded[i].first;
      csv += csv_row({runs[i], m.value("command", ""), m.value("status", ""),
                      std::to_string(m.value("seed", uint64_t{0})), m.value("config_hash", "")});
      json e{{"run", runs[i]}, {"manifest", m}};
      e["manifest"].erase("config");
      if (!loaded[i].second.is_null()) e["report"] = loaded[i].second;
      all.push_back(e);
    }
    ctx.text("summary.csv", csv);
    ctx.text("summary.json", dump_json(json{{"runs", all}}));
    return json{{"runs", loaded.size()}};
  };
}

}  // namespace

const std::vector<std::string>& run_commands() {
  static const std::vector<std::string> c{"train", "align", "merge", "barrier", "taskvec-verify",
                                          "tsv", "mass", "evolve", "report"};
  return c;
}

RunOutcome run_command(const std::string& command, const nlohmann::json& config,
                       const std::string& out_dir, int threads) {
  Cfg c(config, "config");
  const uint64_t seed = c.get<uint64_t>("seed", 0);
  Plan plan;
  if (command == "train") plan = plan_train(c, seed);
  else if (command == "align") plan = plan_align(c, seed);
  else if (command == "merge") plan = plan_merge(c, seed);
  else if (command == "barrier") plan = plan_barrier(c, seed);
  else if (command == "taskvec-verify") plan = plan_taskvec(c, seed);
  else if (command == "tsv") plan = plan_tsv(c, seed);
  else if (command == "mass") plan = plan_mass(c, seed);
  else if (command == "evolve") plan = plan_evolve(c, seed);
  else if (command == "report") plan = plan_report(c, seed);
  else invalid("unknown command '" + command + "'");
  c.done();
  if (out_dir.empty()) invalid("output directory is empty");

  Ctx ctx;
  ctx.out = fs::u8path(out_dir);
  ctx.threads = threads;
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec || !fs::is_directory(ctx.out)) fail(Status::kIoError, "cannot create '" + out_dir + "'");

  RunOutcome res;
  res.manifest = {{"tool", "mergelab"}, {"version", kVersion}, {"command", command},
                  {"seed", seed}, {"config_hash", config_hash(config)}, {"config", config}};
  auto write_manifest = [&] {
    res.manifest["artifacts"] = ctx.artifacts;
    std::ofstream os(ctx.out / "manifest.json", std::ios::binary | std::ios::trunc);
    os << dump_json(res.manifest);
  };
  try {
    res.report = plan(ctx);
    ctx.text("report.json", dump_json(res.report));
    res.manifest["status"] = "ok";
  } catch (const Error& e) {
    res.manifest["status"] = "error";
    res.manifest["error"] = {{"code", status_name(e.code())}, {"message", e.what()}};
    write_manifest();
    throw;
  } catch (const std::exception& e) {
    res.manifest["status"] = "error";
    res.manifest["error"] = {{"code", status_name(Status::kRuntime)}, {"message", e.what()}};
    write_manifest();
    throw;
  }
  write_manifest();
  return res;
}

}  // namespace mergelab
