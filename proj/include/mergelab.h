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

#ifndef MERGELAB_H_
#define MERGELAB_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MERGELAB_API __declspec(dllexport)
#else
#define MERGELAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Every call returns one; details via mergelab_last_error(). */
typedef enum {
  MERGELAB_OK = 0,
  MERGELAB_E_INVALID_ARGUMENT = 1,
  MERGELAB_E_SHAPE_MISMATCH = 2,
  MERGELAB_E_IO = 3,
  MERGELAB_E_FORMAT = 4,
  MERGELAB_E_DIVERGED = 5,
  MERGELAB_E_NUMERICAL = 6,
  MERGELAB_E_NOT_FOUND = 7,
  MERGELAB_E_RUNTIME = 8,
  MERGELAB_E_INTERNAL = 9
} mergelab_status;

typedef struct mergelab_weights mergelab_weights;
typedef struct mergelab_dataset mergelab_dataset;

MERGELAB_API const char* mergelab_version(void);
MERGELAB_API const char* mergelab_status_string(int status);
/* Message of the last failed call on this thread; "" if none. */
MERGELAB_API const char* mergelab_last_error(void);
/* Process exit code for a status: 0 ok, 2 validation, 1 runtime. */
MERGELAB_API int mergelab_exit_code(int status);

MERGELAB_API int mergelab_weights_load(const char* path, mergelab_weights** out);
MERGELAB_API int mergelab_weights_save(const mergelab_weights* w, const char* path);
MERGELAB_API void mergelab_weights_free(mergelab_weights* w);
MERGELAB_API int mergelab_weights_num_params(const mergelab_weights* w, size_t* out);
/* Copies the flattened parameters; len must equal the parameter count. */
MERGELAB_API int mergelab_weights_flat(const mergelab_weights* w, double* buf, size_t len);

MERGELAB_API int mergelab_dataset_load_csv(const char* path, int num_classes,
                                           mergelab_dataset** out);
MERGELAB_API int mergelab_dataset_make(int classes, int dims, int samples, uint64_t seed,
                                       double separation, uint64_t split,
                                       mergelab_dataset** out);
MERGELAB_API void mergelab_dataset_free(mergelab_dataset* d);
MERGELAB_API int mergelab_dataset_size(const mergelab_dataset* d, size_t* out);

MERGELAB_API int mergelab_evaluate(const mergelab_weights* w, const mergelab_dataset* d,
                                   double* accuracy, double* mean_loss);

/* recipe_json: {"method": ..., "coeffs": [...], "seed": n}. pretrained may be
   NULL for average and slerp. */
MERGELAB_API int mergelab_merge(const char* recipe_json, const mergelab_weights* pretrained,
                                const mergelab_weights* const* models, size_t num_models,
                                mergelab_weights** out);

/* Runs one experiment command (train, align, merge, barrier, taskvec-verify,
   tsv, mass, evolve, report) into out_dir. threads <= 0 means 1. On success
   *report_json (if not NULL) receives the report; free it with
   mergelab_string_free. */
MERGELAB_API int mergelab_run(const char* command, const char* config_json,
                              const char* out_dir, int threads, char** report_json);
MERGELAB_API void mergelab_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif  // MERGELAB_H_
