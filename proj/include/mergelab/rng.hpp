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

// Deterministic random numbers.
//
// Every stochastic draw in the library comes from Rng, an mt19937_64 engine
// with hand-rolled distributions so results do not depend on the standard
// library vendor. Seeds for independent consumers are split with
// derive_seed(seed, stream) = splitmix64(seed ^ splitmix64(stream + 1)).

#ifndef MERGELAB_RNG_HPP_
#define MERGELAB_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace mergelab {

uint64_t splitmix64(uint64_t x);
uint64_t derive_seed(uint64_t seed, uint64_t stream);

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(splitmix64(seed)) {}
  Rng(uint64_t seed, uint64_t stream) : Rng(derive_seed(seed, stream)) {}

  uint64_t next() { return eng_(); }
  // 53-bit uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller; the second variate is cached.
  double normal();
  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n);
  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }
  std::vector<size_t> permutation(size_t n);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mergelab

#endif  // MERGELAB_RNG_HPP_
