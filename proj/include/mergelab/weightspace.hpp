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

#ifndef MERGELAB_WEIGHTSPACE_HPP_
#define MERGELAB_WEIGHTSPACE_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mergelab {

enum class Activation { kRelu, kTanh, kSigmoid };

std::string activation_name(Activation a);
Activation parse_activation(std::string_view s);

struct ArchSpec {
  std::vector<int> widths;  // d_0 .. d_L
  Activation activation = Activation::kRelu;
  bool has_bias = true;

  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  void validate() const;
  bool operator==(const ArchSpec&) const = default;
};

struct Layer {
  Eigen::MatrixXd W;  // d_l x d_{l-1}
  Eigen::VectorXd b;  // d_l, or empty when the arch has no bias
};

// Layer l of the network is layers[l - 1].
struct WeightSet {
  ArchSpec arch;
  std::vector<Layer> layers;

  static WeightSet zeros(const ArchSpec& arch);
  size_t num_params() const;
  // Shapes consistent with arch and all entries finite.
  void validate() const;

  WeightSet& operator+=(const WeightSet& o);
  WeightSet& operator-=(const WeightSet& o);
  WeightSet& operator*=(double c);
};

// A displacement in weight space; same layout as a WeightSet.
using TaskVector = WeightSet;

WeightSet operator+(WeightSet a, const WeightSet& b);
WeightSet operator-(WeightSet a, const WeightSet& b);
WeightSet operator*(double c, WeightSet a);

void check_compatible(const WeightSet& a, const WeightSet& b);

// Element-wise sum of coeffs[i] * ws[i].
WeightSet combine(const std::vector<double>& coeffs,
                  const std::vector<const WeightSet*>& ws);
WeightSet combine(const std::vector<double>& coeffs,
                  const std::vector<WeightSet>& ws);

// Layer-major; within a layer W row-major then b.
Eigen::VectorXd flatten(const WeightSet& w);
WeightSet unflatten(const ArchSpec& arch, const Eigen::VectorXd& v);

struct Cosine {
  double value = 0.0;
  bool degenerate = false;  // an operand had zero norm
};
Cosine cosine_sim(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
Cosine cosine_sim(const WeightSet& a, const WeightSet& b);

double dot(const WeightSet& a, const WeightSet& b);
double norm2(const WeightSet& w);
double max_abs(const WeightSet& w);
bool all_finite(const WeightSet& w);
bool bit_equal(const WeightSet& a, const WeightSet& b);

// MWS container. Little-endian, no padding:
//   "MWS1" | u32 manifest_len | manifest json | u32 tensor_count |
//   per tensor: u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 values
struct Tensor {
  std::string name;
  std::vector<uint64_t> dims;
  std::vector<double> values;  // row-major
};

struct MwsFile {
  nlohmann::json manifest;
  std::vector<Tensor> tensors;
};

std::string encode_mws(const MwsFile& f);
MwsFile decode_mws(std::string_view bytes);
void write_mws(const std::string& path, const MwsFile& f);
MwsFile read_mws(const std::string& path);

nlohmann::json arch_to_json(const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);

MwsFile weights_to_mws(const WeightSet& w);
WeightSet weights_from_mws(const MwsFile& f);
void save_weights(const WeightSet& w, const std::string& path);
WeightSet load_weights(const std::string& path);

}  // namespace mergelab

#endif  // MERGELAB_WEIGHTSPACE_HPP_
