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

#ifndef MERGELAB_RUNNERS_HPP_
#define MERGELAB_RUNNERS_HPP_

#include <string>
#include <vector>

#include "json.hpp"

namespace mergelab {

extern const char* const kVersion;

// f64 text with the given number of significant digits.
std::string format_double(double v, int digits = 17);
// JSON text with every float printed at 17 significant digits.
std::string dump_json(const nlohmann::json& j, int indent = 2);
// FNV-1a over the canonical dump.
std::string config_hash(const nlohmann::json& config);

const std::vector<std::string>& run_commands();

struct RunOutcome {
  nlohmann::json report;
  nlohmann::json manifest;
};

// Validates config, then runs the command into out_dir. A manifest.json is
// written once validation has passed, also when the run fails.
RunOutcome run_command(const std::string& command, const nlohmann::json& config,
                       const std::string& out_dir, int threads);

}  // namespace mergelab

#endif  // MERGELAB_RUNNERS_HPP_
