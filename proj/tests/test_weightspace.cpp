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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <limits>

#include "mergelab/error.hpp"
#include "mergelab/nnet.hpp"
#include "mergelab/rng.hpp"
#include "mergelab/weightspace.hpp"

namespace mergelab {
namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mergelab_ws_" + name))
      .string();
}

WeightSet random_weights(const ArchSpec& arch, uint64_t seed) {
  WeightSet w = WeightSet::zeros(arch);
  Rng rng(seed);
  for (auto& l : w.layers) {
    for (Eigen::Index i = 0; i < l.W.size(); ++i) l.W.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = rng.normal();
  }
  return w;
}

ArchSpec small_arch() { return {{3, 4, 2}, Activation::kTanh, true}; }

TEST(Rng, DeterministicPerSeedAndStream) {
  Rng a(7, 3), b(7, 3), c(7, 4);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Rng d(7, 3);
  EXPECT_NE(d.next(), c.next());
}

TEST(Rng, UniformAndNormalMoments) {
  Rng r(1);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  double u = 0;
  for (int i = 0; i < n; ++i) u += r.uniform();
  EXPECT_NEAR(u / n, 0.5, 0.005);
}

TEST(WeightSet, ValidateCatchesShapeAndNan) {
  WeightSet w = WeightSet::zeros(small_arch());
  EXPECT_NO_THROW(w.validate());
  w.layers[0].W(0, 0) = std::nan("");
  EXPECT_THROW(w.validate(), Error);
  WeightSet v = WeightSet::zeros(small_arch());
  v.layers[1].W.resize(3, 3);
  EXPECT_THROW(v.validate(), Error);
}

TEST(Combine, IdentityAndConvexity) {
  WeightSet w = random_weights(small_arch(), 1);
  EXPECT_TRUE(bit_equal(combine({1.0}, {w}), w));
  EXPECT_TRUE(bit_equal(combine({0.5, 0.5}, {w, w}), w));
}

TEST(Combine, SubtractThenAddRecovers) {
  ArchSpec arch{{3, 3}, Activation::kRelu, false};
  WeightSet a = random_weights(arch, 2), b = random_weights(arch, 3);
  WeightSet d = combine({1.0, -1.0}, {a, b});
  WeightSet back = combine({1.0, 1.0}, {b, d});
  EXPECT_LE(max_abs(back - a), 1e-15 * (1.0 + max_abs(a)) * 4);
}

TEST(Combine, Errors) {
  WeightSet w = random_weights(small_arch(), 1);
  WeightSet other = WeightSet::zeros({{3, 5, 2}, Activation::kTanh, true});
  EXPECT_THROW(combine({1.0, 1.0}, {w, other}), Error);
  EXPECT_THROW(combine({}, std::vector<WeightSet>{}), Error);
  EXPECT_THROW(combine({1.0}, {w, w}), Error);
}

TEST(Combine, LinearityAndFlattenCommute) {
  WeightSet a = random_weights(small_arch(), 4), b = random_weights(small_arch(), 5);
  WeightSet lhs = combine({0.3 + 0.9}, {a});
  WeightSet rhs = combine({0.3}, {a}) + combine({0.9}, {a});
  EXPECT_LE(max_abs(lhs - rhs), 1e-12 * max_abs(lhs));
  Eigen::VectorXd f = flatten(combine({0.25, -1.5}, {a, b}));
  Eigen::VectorXd g = 0.25 * flatten(a) - 1.5 * flatten(b);
  EXPECT_LE((f - g).norm(), 1e-12 * g.norm());
}

TEST(Flatten, OrderIsLayerMajorRowMajorThenBias) {
  ArchSpec arch{{2, 2, 1}, Activation::kRelu, true};
  WeightSet w = WeightSet::zeros(arch);
  w.layers[0].W << 1, 2, 3, 4;
  w.layers[0].b << 5, 6;
  w.layers[1].W << 7, 8;
  w.layers[1].b << 9;
  Eigen::VectorXd v = flatten(w);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(v[i], i + 1);
  EXPECT_TRUE(bit_equal(unflatten(arch, v), w));
}

TEST(Cosine, SelfOppositeAndOrthogonal) {
  WeightSet w = random_weights(small_arch(), 6);
  EXPECT_NEAR(cosine_sim(w, w).value, 1.0, 1e-15);
  EXPECT_NEAR(cosine_sim(w, -1.0 * w).value, -1.0, 1e-15);
  // Gram-Schmidt a second random vector against the first.
  Eigen::VectorXd a = flatten(w);
  Eigen::VectorXd b = flatten(random_weights(small_arch(), 7));
  b -= a * (a.dot(b) / a.dot(a));
  EXPECT_NEAR(cosine_sim(a, b).value, 0.0, 1e-12);
}

TEST(Cosine, ZeroNormIsDegenerate) {
  WeightSet w = random_weights(small_arch(), 6);
  Cosine c = cosine_sim(w, WeightSet::zeros(small_arch()));
  EXPECT_TRUE(c.degenerate);
  EXPECT_EQ(c.value, 0.0);
}

TEST(Mws, RoundTripIsBitExactIncludingSignedZeroAndSubnormals) {
  WeightSet w = random_weights(small_arch(), 8);
  w.layers[0].W(0, 0) = -0.0;
  w.layers[0].W(0, 1) = std::numeric_limits<double>::denorm_min();
  w.layers[0].W(1, 1) = -std::numeric_limits<double>::denorm_min() * 77;
  w.layers[1].b[0] = std::numeric_limits<double>::max();
  std::string p = tmp_path("roundtrip.mws");
  save_weights(w, p);
  WeightSet r = load_weights(p);
  EXPECT_TRUE(bit_equal(w, r));
  EXPECT_TRUE(std::signbit(r.layers[0].W(0, 0)));
  std::remove(p.c_str());
}

TEST(Mws, FileSizeMatchesByteLayout) {
  ArchSpec arch{{2, 2}, Activation::kRelu, true};
  WeightSet w = random_weights(arch, 9);
  std::string bytes = encode_mws(weights_to_mws(w));
  std::string manifest = R"({"activation":"relu","has_bias":true,"widths":[2,2]})";
  // magic + len + manifest + count
  size_t expected = 4 + 4 + manifest.size() + 4;
  // "W1": name_len + name + ndim + 2 dims + 4 values
  expected += 4 + 2 + 4 + 2 * 8 + 4 * 8;
  // "b1": name_len + name + ndim + 1 dim + 2 values
  expected += 4 + 2 + 4 + 1 * 8 + 2 * 8;
  EXPECT_EQ(bytes.size(), expected);
  EXPECT_EQ(bytes.substr(8, manifest.size()), manifest);
  uint32_t mlen;
  std::memcpy(&mlen, bytes.data() + 4, 4);
  EXPECT_EQ(mlen, manifest.size());
}

TEST(Mws, BadMagicTruncationAndMismatch) {
  WeightSet w = random_weights(small_arch(), 10);
  std::string bytes = encode_mws(weights_to_mws(w));
  std::string bad = bytes;
  bad.replace(0, 4, "XXXX");
  try {
    decode_mws(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Status::kFormatError);
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  EXPECT_THROW(decode_mws(bytes.substr(0, bytes.size() - 3)), Error);
  MwsFile f = weights_to_mws(w);
  f.manifest["widths"] = {3, 5, 2};
  try {
    weights_from_mws(decode_mws(encode_mws(f)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Status::kShapeMismatch);
  }
}

TEST(Mws, NoBiasArchStoresOnlyMatrices) {
  ArchSpec arch{{2, 3, 2}, Activation::kSigmoid, false};
  WeightSet w = random_weights(arch, 11);
  MwsFile f = weights_to_mws(w);
  ASSERT_EQ(f.tensors.size(), 2u);
  EXPECT_EQ(f.tensors[1].name, "W2");
  EXPECT_TRUE(bit_equal(weights_from_mws(decode_mws(encode_mws(f))), w));
}

}  // namespace
}  // namespace mergelab
