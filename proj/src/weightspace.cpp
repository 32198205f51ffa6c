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

#include "mergelab/weightspace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mergelab/error.hpp"

namespace mergelab {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "relu";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  fail(Status::kInvalidArgument, "unknown activation '" + std::string(s) + "'");
}

void ArchSpec::validate() const {
  require(widths.size() >= 2, Status::kInvalidArgument,
          "arch needs at least two widths");
  for (int w : widths)
    require(w >= 1, Status::kInvalidArgument, "arch widths must be >= 1");
}

WeightSet WeightSet::zeros(const ArchSpec& arch) {
  arch.validate();
  WeightSet w;
  w.arch = arch;
  for (int l = 1; l <= arch.num_layers(); ++l) {
    Layer layer;
    layer.W = Eigen::MatrixXd::Zero(arch.widths[l], arch.widths[l - 1]);
    layer.b = arch.has_bias ? Eigen::VectorXd::Zero(arch.widths[l])
                            : Eigen::VectorXd();
    w.layers.push_back(std::move(layer));
  }
  return w;
}

size_t WeightSet::num_params() const {
  size_t n = 0;
  for (const auto& l : layers) n += l.W.size() + l.b.size();
  return n;
}

void WeightSet::validate() const {
  arch.validate();
  require(static_cast<int>(layers.size()) == arch.num_layers(),
          Status::kShapeMismatch, "layer count does not match arch");
  for (int l = 1; l <= arch.num_layers(); ++l) {
    const Layer& L = layers[l - 1];
    require(L.W.rows() == arch.widths[l] && L.W.cols() == arch.widths[l - 1],
            Status::kShapeMismatch,
            "W" + std::to_string(l) + " shape does not match arch");
    require(L.b.size() == (arch.has_bias ? arch.widths[l] : 0),
            Status::kShapeMismatch,
            "b" + std::to_string(l) + " shape does not match arch");
    require(L.W.allFinite() && L.b.allFinite(), Status::kNumerical,
            "non-finite entry in layer " + std::to_string(l));
  }
}

void check_compatible(const WeightSet& a, const WeightSet& b) {
  require(a.arch == b.arch, Status::kShapeMismatch,
          "weight sets have different architectures");
  require(a.layers.size() == b.layers.size(), Status::kShapeMismatch,
          "weight sets have different layer counts");
  for (size_t i = 0; i < a.layers.size(); ++i) {
    require(a.layers[i].W.rows() == b.layers[i].W.rows() &&
                a.layers[i].W.cols() == b.layers[i].W.cols() &&
                a.layers[i].b.size() == b.layers[i].b.size(),
            Status::kShapeMismatch, "layer shapes differ");
  }
}

WeightSet& WeightSet::operator+=(const WeightSet& o) {
  check_compatible(*this, o);
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].W += o.layers[i].W;
    layers[i].b += o.layers[i].b;
  }
  return *this;
}

WeightSet& WeightSet::operator-=(const WeightSet& o) {
  check_compatible(*this, o);
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].W -= o.layers[i].W;
    layers[i].b -= o.layers[i].b;
  }
  return *this;
}

WeightSet& WeightSet::operator*=(double c) {
  for (auto& l : layers) {
    l.W *= c;
    l.b *= c;
  }
  return *this;
}

WeightSet operator+(WeightSet a, const WeightSet& b) { return a += b; }
WeightSet operator-(WeightSet a, const WeightSet& b) { return a -= b; }
WeightSet operator*(double c, WeightSet a) { return a *= c; }

WeightSet combine(const std::vector<double>& coeffs,
                  const std::vector<const WeightSet*>& ws) {
  require(!ws.empty(), Status::kInvalidArgument, "combine: empty list");
  require(coeffs.size() == ws.size(), Status::kInvalidArgument,
          "combine: coefficient count does not match operand count");
  for (const WeightSet* w : ws) check_compatible(*ws[0], *w);
  WeightSet out = WeightSet::zeros(ws[0]->arch);
  for (size_t l = 0; l < out.layers.size(); ++l) {
    for (size_t i = 0; i < ws.size(); ++i) {
      out.layers[l].W += coeffs[i] * ws[i]->layers[l].W;
      out.layers[l].b += coeffs[i] * ws[i]->layers[l].b;
    }
  }
  return out;
}

WeightSet combine(const std::vector<double>& coeffs,
                  const std::vector<WeightSet>& ws) {
  std::vector<const WeightSet*> ptrs;
  for (const auto& w : ws) ptrs.push_back(&w);
  return combine(coeffs, ptrs);
}

Eigen::VectorXd flatten(const WeightSet& w) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(w.num_params()));
  Eigen::Index k = 0;
  for (const auto& l : w.layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) v[k++] = l.W(r, c);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) v[k++] = l.b[r];
  }
  return v;
}

WeightSet unflatten(const ArchSpec& arch, const Eigen::VectorXd& v) {
  WeightSet w = WeightSet::zeros(arch);
  require(static_cast<size_t>(v.size()) == w.num_params(),
          Status::kShapeMismatch, "unflatten: vector length does not match arch");
  Eigen::Index k = 0;
  for (auto& l : w.layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = v[k++];
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = v[k++];
  }
  return w;
}

Cosine cosine_sim(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require(a.size() == b.size(), Status::kShapeMismatch,
          "cosine_sim: length mismatch");
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  double c = a.dot(b) / (na * nb);
  return {std::clamp(c, -1.0, 1.0), false};
}

Cosine cosine_sim(const WeightSet& a, const WeightSet& b) {
  check_compatible(a, b);
  return cosine_sim(flatten(a), flatten(b));
}

double dot(const WeightSet& a, const WeightSet& b) {
  check_compatible(a, b);
  double s = 0.0;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    s += (a.layers[i].W.array() * b.layers[i].W.array()).sum();
    s += a.layers[i].b.dot(b.layers[i].b);
  }
  return s;
}

double norm2(const WeightSet& w) { return std::sqrt(dot(w, w)); }

double max_abs(const WeightSet& w) {
  double m = 0.0;
  for (const auto& l : w.layers) {
    if (l.W.size()) m = std::max(m, l.W.cwiseAbs().maxCoeff());
    if (l.b.size()) m = std::max(m, l.b.cwiseAbs().maxCoeff());
  }
  return m;
}

bool all_finite(const WeightSet& w) {
  for (const auto& l : w.layers)
    if (!l.W.allFinite() || !l.b.allFinite()) return false;
  return true;
}

bool bit_equal(const WeightSet& a, const WeightSet& b) {
  if (!(a.arch == b.arch) || a.layers.size() != b.layers.size()) return false;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.W.rows() != y.W.rows() || x.W.cols() != y.W.cols() ||
        x.b.size() != y.b.size())
      return false;
    if (std::memcmp(x.W.data(), y.W.data(), sizeof(double) * x.W.size()) != 0)
      return false;
    if (x.b.size() &&
        std::memcmp(x.b.data(), y.b.data(), sizeof(double) * x.b.size()) != 0)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// MWS container

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, s_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string_view bytes(size_t n) {
    need(n);
    auto v = s_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  bool done() const { return pos_ == s_.size(); }

 private:
  void need(size_t n) const {
    if (s_.size() - pos_ < n)
      fail(Status::kFormatError, "MWS: truncated file");
  }
  std::string_view s_;
  size_t pos_ = 0;
};

}  // namespace

std::string encode_mws(const MwsFile& f) {
  std::string out = "MWS1";
  std::string manifest = f.manifest.dump();
  put_le<uint32_t>(out, static_cast<uint32_t>(manifest.size()));
  out += manifest;
  put_le<uint32_t>(out, static_cast<uint32_t>(f.tensors.size()));
  for (const auto& t : f.tensors) {
    uint64_t count = 1;
    for (uint64_t d : t.dims) count *= d;
    require(count == t.values.size(), Status::kShapeMismatch,
            "MWS: tensor '" + t.name + "' dims do not match value count");
    put_le<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out += t.name;
    put_le<uint32_t>(out, static_cast<uint32_t>(t.dims.size()));
    for (uint64_t d : t.dims) put_le<uint64_t>(out, d);
    for (double v : t.values) put_le<double>(out, v);
  }
  return out;
}

MwsFile decode_mws(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != "MWS1")
    fail(Status::kFormatError, "MWS: bad magic");
  r.bytes(4);
  MwsFile f;
  uint32_t mlen = r.get<uint32_t>();
  auto mtext = r.bytes(mlen);
  try {
    f.manifest = nlohmann::json::parse(mtext);
  } catch (const std::exception& e) {
    fail(Status::kFormatError, std::string("MWS: bad manifest: ") + e.what());
  }
  uint32_t count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    Tensor t;
    uint32_t nlen = r.get<uint32_t>();
    t.name = std::string(r.bytes(nlen));
    uint32_t ndim = r.get<uint32_t>();
    uint64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      t.dims.push_back(r.get<uint64_t>());
      n *= t.dims.back();
    }
    if (n > bytes.size() / sizeof(double))
      fail(Status::kFormatError, "MWS: truncated file");
    t.values.resize(n);
    for (uint64_t k = 0; k < n; ++k) t.values[k] = r.get<double>();
    f.tensors.push_back(std::move(t));
  }
  if (!r.done()) fail(Status::kFormatError, "MWS: trailing bytes");
  return f;
}

void write_mws(const std::string& path, const MwsFile& f) {
  std::string bytes = encode_mws(f);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(Status::kIoError, "cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(Status::kIoError, "write failed for '" + path + "'");
}

MwsFile read_mws(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Status::kIoError, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  return decode_mws(bytes);
}

nlohmann::json arch_to_json(const ArchSpec& a) {
  return {{"widths", a.widths},
          {"activation", activation_name(a.activation)},
          {"has_bias", a.has_bias}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  try {
    a.widths = j.at("widths").get<std::vector<int>>();
    a.activation = parse_activation(j.at("activation").get<std::string>());
    a.has_bias = j.at("has_bias").get<bool>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Status::kFormatError, std::string("bad arch manifest: ") + e.what());
  }
  a.validate();
  return a;
}

MwsFile weights_to_mws(const WeightSet& w) {
  MwsFile f;
  f.manifest = arch_to_json(w.arch);
  for (size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    Tensor tw;
    tw.name = "W" + std::to_string(l + 1);
    tw.dims = {static_cast<uint64_t>(L.W.rows()),
               static_cast<uint64_t>(L.W.cols())};
    for (Eigen::Index r = 0; r < L.W.rows(); ++r)
      for (Eigen::Index c = 0; c < L.W.cols(); ++c)
        tw.values.push_back(L.W(r, c));
    f.tensors.push_back(std::move(tw));
    if (w.arch.has_bias) {
      Tensor tb;
      tb.name = "b" + std::to_string(l + 1);
      tb.dims = {static_cast<uint64_t>(L.b.size())};
      tb.values.assign(L.b.data(), L.b.data() + L.b.size());
      f.tensors.push_back(std::move(tb));
    }
  }
  return f;
}

WeightSet weights_from_mws(const MwsFile& f) {
  ArchSpec arch = arch_from_json(f.manifest);
  WeightSet w = WeightSet::zeros(arch);
  size_t expected = arch.num_layers() * (arch.has_bias ? 2 : 1);
  require(f.tensors.size() == expected, Status::kShapeMismatch,
          "MWS: tensor count does not match manifest");
  size_t k = 0;
  for (int l = 1; l <= arch.num_layers(); ++l) {
    Layer& L = w.layers[l - 1];
    const Tensor& tw = f.tensors[k++];
    require(tw.name == "W" + std::to_string(l) && tw.dims.size() == 2 &&
                tw.dims[0] == static_cast<uint64_t>(L.W.rows()) &&
                tw.dims[1] == static_cast<uint64_t>(L.W.cols()),
            Status::kShapeMismatch,
            "MWS: tensor '" + tw.name + "' does not match manifest");
    size_t i = 0;
    for (Eigen::Index r = 0; r < L.W.rows(); ++r)
      for (Eigen::Index c = 0; c < L.W.cols(); ++c) L.W(r, c) = tw.values[i++];
    if (arch.has_bias) {
      const Tensor& tb = f.tensors[k++];
      require(tb.name == "b" + std::to_string(l) && tb.dims.size() == 1 &&
                  tb.dims[0] == static_cast<uint64_t>(L.b.size()),
              Status::kShapeMismatch,
              "MWS: tensor '" + tb.name + "' does not match manifest");
      for (Eigen::Index r = 0; r < L.b.size(); ++r) L.b[r] = tb.values[r];
    }
  }
  return w;
}

void save_weights(const WeightSet& w, const std::string& path) {
  w.validate();
  write_mws(path, weights_to_mws(w));
}

WeightSet load_weights(const std::string& path) {
  return weights_from_mws(read_mws(path));
}

}  // namespace mergelab
