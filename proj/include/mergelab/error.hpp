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

#ifndef MERGELAB_ERROR_HPP_
#define MERGELAB_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace mergelab {

// Numeric values match the MLAB_* codes in mergelab.h.
enum class Status : int {
  kOk = 0,
  kInvalidArgument = 1,
  kShapeMismatch = 2,
  kIoError = 3,
  kFormatError = 4,
  kDiverged = 5,
  kNumerical = 6,
  kNotFound = 7,
  kRuntime = 8,
};

const char* status_name(Status s);

class Error : public std::runtime_error {
 public:
  Error(Status code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  Status code() const { return code_; }

 private:
  Status code_;
};

[[noreturn]] inline void fail(Status code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Status code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace mergelab

#endif  // MERGELAB_ERROR_HPP_
