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

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include "json.hpp"

#include "mergelab.h"

namespace {

using json = nlohmann::json;

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out = "mergelab_out";
  int threads = 1;
};

struct Flags {
  std::optional<std::string> data, a, b, pretrained, method, op, estimator;
  std::vector<std::string> models, runs;
  std::optional<std::vector<double>> coeffs;
  std::optional<int> epochs, grid, k, pop, iters;
  std::optional<double> eta, alpha;
};

template <typename T>
void put(json& cfg, const char* key, const std::optional<T>& v) {
  if (v) cfg[key] = *v;
}

void put(json& cfg, const char* key, const std::vector<std::string>& v) {
  if (!v.empty()) cfg[key] = v;
}

int fail_with(int code, const std::string& msg) {
  std::fprintf(stderr, "mergelab: %s\n", msg.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mergelab: weight-space model merging experiments"};
  app.set_version_flag("--version", std::string(mergelab_version()));
  app.require_subcommand(1);
  Common com;
  Flags fl;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", com.config, "experiment config (JSON)");
    s->add_option("--seed", com.seed, "master seed (overrides config)");
    s->add_option("--out", com.out, "output directory");
    s->add_option("--threads", com.threads, "worker threads, 0 = auto")->check(CLI::NonNegativeNumber);
  };

  auto* train = app.add_subcommand("train", "train an MLP");
  train->add_option("--data", fl.data, "training CSV");
  train->add_option("--epochs", fl.epochs);
  train->add_option("--eta", fl.eta);
  auto* align = app.add_subcommand("align", "align hidden units of models and merge");
  align->add_option("--models", fl.models, "MWS files");
  align->add_option("--method", fl.method, "fw_pairwise | fw_multi | activation | merge_many");
  align->add_option("--data", fl.data, "probe CSV");
  auto* merge = app.add_subcommand("merge", "apply a merge recipe");
  merge->add_option("--pretrained", fl.pretrained);
  merge->add_option("--models", fl.models);
  merge->add_option("--method", fl.method);
  merge->add_option("--coeffs", fl.coeffs);
  auto* barrier = app.add_subcommand("barrier", "loss barrier along the linear path");
  barrier->add_option("--a", fl.a);
  barrier->add_option("--b", fl.b);
  barrier->add_option("--data", fl.data);
  barrier->add_option("--grid", fl.grid);
  auto* tv = app.add_subcommand("taskvec-verify", "task arithmetic vs multi-task training");
  tv->add_option("--k", fl.k, "epochs");
  tv->add_option("--eta", fl.eta);
  tv->add_option("--alpha", fl.alpha);
  auto* tsv = app.add_subcommand("tsv", "task singular vectors: merge, compress, sti");
  tsv->add_option("--op", fl.op);
  tsv->add_option("--k", fl.k);
  tsv->add_option("--pretrained", fl.pretrained);
  tsv->add_option("--models", fl.models);
  auto* mass = app.add_subcommand("mass", "adaptive subspace routing");
  mass->add_option("--pretrained", fl.pretrained);
  mass->add_option("--models", fl.models);
  auto* evolve = app.add_subcommand("evolve", "evolutionary merge with subset fitness");
  evolve->add_option("--pretrained", fl.pretrained);
  evolve->add_option("--models", fl.models);
  evolve->add_option("--pop", fl.pop);
  evolve->add_option("--iters", fl.iters);
  evolve->add_option("--estimator", fl.estimator, "observed | mp_irt | gmp_irt");
  auto* report = app.add_subcommand("report", "summarize run directories");
  report->add_option("--in", fl.runs, "run directories");
  for (auto* s : app.get_subcommands({})) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  json cfg = json::object();
  if (!com.config.empty()) {
    std::ifstream is(com.config);
    if (!is) return fail_with(2, "cannot read config '" + com.config + "'");
    try {
      cfg = json::parse(is);
    } catch (const json::exception& e) {
      return fail_with(2, "config '" + com.config + "': " + e.what());
    }
    if (!cfg.is_object()) return fail_with(2, "config must be a JSON object");
  }

  put(cfg, "models", fl.models);
  put(cfg, "pretrained", fl.pretrained);
  put(cfg, "a", fl.a);
  put(cfg, "b", fl.b);
  put(cfg, "grid", fl.grid);
  put(cfg, "k", fl.k);
  put(cfg, "alpha", fl.alpha);
  put(cfg, "op", fl.op);
  put(cfg, "estimator", fl.estimator);
  put(cfg, "runs", fl.runs);
  if (fl.data) cfg[cmd == "train" || cmd == "barrier" ? "data" : "probe"] = *fl.data;
  if (cmd == "train") {
    if (fl.epochs) cfg["train"]["epochs"] = *fl.epochs;
    if (fl.eta) cfg["train"]["eta"] = *fl.eta;
  } else {
    put(cfg, "eta", fl.eta);
  }
  if (cmd == "merge" && (fl.method || fl.coeffs)) {
    if (fl.method) cfg["recipe"]["method"] = *fl.method;
    if (fl.coeffs) cfg["recipe"]["coeffs"] = *fl.coeffs;
  } else {
    put(cfg, "method", fl.method);
  }
  if (fl.pop) cfg["ga"]["pop"] = *fl.pop;
  if (fl.iters) cfg["ga"]["iters"] = *fl.iters;

  if (com.seed) {
    cfg["seed"] = *com.seed;
  } else if (!cfg.contains("seed")) {
    uint64_t s = 0;
    if (const char* env = std::getenv("MERGELAB_SEED")) {
      try {
        size_t pos = 0;
        s = std::stoull(env, &pos);
        if (env[pos] != '\0') throw std::invalid_argument(env);
      } catch (const std::exception&) {
        return fail_with(2, std::string("MERGELAB_SEED is not an unsigned integer: '") + env + "'");
      }
    }
    cfg["seed"] = s;
  }
  int threads = com.threads;
  if (threads == 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const int st = mergelab_run(cmd.c_str(), cfg.dump().c_str(), com.out.c_str(), threads, nullptr);
  if (st != MERGELAB_OK)
    return fail_with(mergelab_exit_code(st),
                     std::string(mergelab_status_string(st)) + ": " + mergelab_last_error());
  std::printf("%s: wrote %s\n", cmd.c_str(), com.out.c_str());
  return 0;
}
