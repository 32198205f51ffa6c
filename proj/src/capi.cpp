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

#include "mergelab.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "mergelab/error.hpp"
#include "mergelab/merge_ops.hpp"
#include "mergelab/nnet.hpp"
#include "mergelab/weightspace.hpp"
#include "runners.hpp"

struct mergelab_weights {
  mergelab::WeightSet w;
};

struct mergelab_dataset {
  mergelab::Dataset d;
};

namespace {

thread_local std::string g_last_error;

int set_error(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename Fn>
int guard(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MERGELAB_OK;
  } catch (const mergelab::Error& e) {
    return set_error(static_cast<int>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(MERGELAB_E_FORMAT, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(MERGELAB_E_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return set_error(MERGELAB_E_INTERNAL, e.what());
  } catch (...) {
    return set_error(MERGELAB_E_INTERNAL, "unknown exception");
  }
}

void need(const void* p, const char* what) {
  if (!p) mergelab::fail(mergelab::Status::kInvalidArgument, std::string(what) + " is NULL");
}

}  // namespace

extern "C" {

const char* mergelab_version(void) { return mergelab::kVersion; }

const char* mergelab_status_string(int status) {
  if (status == MERGELAB_E_INTERNAL) return "internal";
  if (status < 0 || status > MERGELAB_E_INTERNAL) return "unknown";
  return mergelab::status_name(static_cast<mergelab::Status>(status));
}

const char* mergelab_last_error(void) { return g_last_error.c_str(); }

int mergelab_exit_code(int status) {
  switch (status) {
    case MERGELAB_OK:
      return 0;
    case MERGELAB_E_INVALID_ARGUMENT:
    case MERGELAB_E_SHAPE_MISMATCH:
    case MERGELAB_E_FORMAT:
    case MERGELAB_E_NOT_FOUND:
      return 2;
    default:
      return 1;
  }
}

int mergelab_weights_load(const char* path, mergelab_weights** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new mergelab_weights{mergelab::load_weights(path)};
  });
}

int mergelab_weights_save(const mergelab_weights* w, const char* path) {
  return guard([&] {
    need(w, "weights");
    need(path, "path");
    mergelab::save_weights(w->w, path);
  });
}

void mergelab_weights_free(mergelab_weights* w) { delete w; }

int mergelab_weights_num_params(const mergelab_weights* w, size_t* out) {
  return guard([&] {
    need(w, "weights");
    need(out, "out");
    *out = static_cast<size_t>(mergelab::flatten(w->w).size());
  });
}

int mergelab_weights_flat(const mergelab_weights* w, double* buf, size_t len) {
  return guard([&] {
    need(w, "weights");
    need(buf, "buf");
    Eigen::VectorXd v = mergelab::flatten(w->w);
    mergelab::require(static_cast<size_t>(v.size()) == len, mergelab::Status::kShapeMismatch,
                      "buffer length " + std::to_string(len) + " != " + std::to_string(v.size()));
    std::memcpy(buf, v.data(), len * sizeof(double));
  });
}

int mergelab_dataset_load_csv(const char* path, int num_classes, mergelab_dataset** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new mergelab_dataset{mergelab::load_csv(path, num_classes)};
  });
}

int mergelab_dataset_make(int classes, int dims, int samples, uint64_t seed, double separation,
                          uint64_t split, mergelab_dataset** out) {
  return guard([&] {
    need(out, "out");
    mergelab::DatasetSpec s{classes, dims, samples, seed, separation, split, "blobs"};
    *out = new mergelab_dataset{mergelab::make_dataset(s)};
  });
}

void mergelab_dataset_free(mergelab_dataset* d) { delete d; }

int mergelab_dataset_size(const mergelab_dataset* d, size_t* out) {
  return guard([&] {
    need(d, "dataset");
    need(out, "out");
    *out = d->d.size();
  });
}

int mergelab_evaluate(const mergelab_weights* w, const mergelab_dataset* d, double* accuracy,
                      double* mean_loss) {
  return guard([&] {
    need(w, "weights");
    need(d, "dataset");
    mergelab::EvalResult r = mergelab::evaluate(w->w, d->d);
    if (accuracy) *accuracy = r.accuracy;
    if (mean_loss) *mean_loss = r.mean_loss;
  });
}

int mergelab_merge(const char* recipe_json, const mergelab_weights* pretrained,
                   const mergelab_weights* const* models, size_t num_models,
                   mergelab_weights** out) {
  return guard([&] {
    need(recipe_json, "recipe_json");
    need(models, "models");
    need(out, "out");
    mergelab::MergeRecipe r = mergelab::recipe_from_json(nlohmann::json::parse(recipe_json));
    std::vector<mergelab::WeightSet> ws;
    for (size_t i = 0; i < num_models; ++i) {
      need(models[i], "models[i]");
      ws.push_back(models[i]->w);
    }
    mergelab::require(!ws.empty(), mergelab::Status::kInvalidArgument, "no models");
    if (!pretrained)
      mergelab::require(r.method == mergelab::MergeMethod::kAverage ||
                            r.method == mergelab::MergeMethod::kSlerp,
                        mergelab::Status::kInvalidArgument, "this method needs a pretrained model");
    const mergelab::WeightSet& pre = pretrained ? pretrained->w : ws[0];
    *out = new mergelab_weights{mergelab::apply_recipe(r, pre, ws)};
  });
}

int mergelab_run(const char* command, const char* config_json, const char* out_dir, int threads,
                 char** report_json) {
  return guard([&] {
    need(command, "command");
    need(out_dir, "out_dir");
    nlohmann::json cfg = config_json ? nlohmann::json::parse(config_json) : nlohmann::json::object();
    mergelab::RunOutcome r = mergelab::run_command(command, cfg, out_dir, threads > 0 ? threads : 1);
    if (report_json) {
      const std::string s = mergelab::dump_json(r.report);
      char* p = static_cast<char*>(std::malloc(s.size() + 1));
      if (!p) throw std::bad_alloc();
      std::memcpy(p, s.c_str(), s.size() + 1);
      *report_json = p;
    }
  });
}

void mergelab_string_free(char* s) { std::free(s); }

}  // extern "C"
