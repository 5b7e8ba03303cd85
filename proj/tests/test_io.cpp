// Copyright 2026 The ropescope Authors.
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include <json.hpp>

#include "oracle.hpp"
#include "ropescope/activations.hpp"
#include "ropescope/errors.hpp"
#include "ropescope/random.hpp"
#include "ropescope/synthetic.hpp"
#include "ropescope/tensor_store.hpp"

using namespace ropescope;

namespace {

Matrix<double> random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// A container built byte by byte, independent of the encoder.
std::string handmade_container() {
  std::string s = "RSTN";
  put_u32(s, 1);
  put_u32(s, 3);
  s += "abc";
  s.push_back(1);  // f64
  s.push_back(2);  // rank
  put_u64(s, 1);
  put_u64(s, 2);
  for (const double v : {1.5, -2.0}) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, 8);
    put_u64(s, bits);
  }
  return s;
}

ActivationTrace small_trace(std::uint64_t seed) {
  SyntheticTraceSpec spec;
  spec.seq_len = 12;
  spec.head_dim = 8;
  spec.planted_heads = 1;
  spec.noise_heads = 1;
  spec.seed = seed;
  return make_synthetic_trace(spec).trace;
}

}  // namespace

TEST_CASE("handmade container decodes") {
  const auto tensors = decode_container(handmade_container());
  REQUIRE(tensors.size() == 1);
  CHECK(tensors[0].name == "abc");
  CHECK(tensors[0].dtype == DType::F64);
  CHECK(tensors[0].shape == std::vector<std::uint64_t>{1, 2});
  const Matrix<double> m = tensors[0].to_matrix<double>();
  CHECK(m(0, 0) == 1.5);
  CHECK(m(0, 1) == -2.0);
  CHECK(encode_container(tensors) == handmade_container());
}

TEST_CASE("container round trip is bitwise") {
  Rng rng(1);
  const Matrix<double> a = random_matrix(rng, 5, 7);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(9, -1, 1);
  std::vector<Tensor> tensors{Tensor::from_matrix("a64", a, DType::F64),
                              Tensor::from_matrix("a32", a, DType::F32),
                              Tensor::from_vector("v", v, DType::F64)};
  const auto back = decode_container(encode_container(tensors));
  CHECK(back == tensors);
  CHECK(back[0].to_matrix<double>() == a);
  CHECK(back[1].to_matrix<float>() == a.cast<float>());
  CHECK(back[2].shape == std::vector<std::uint64_t>{9});

  oracle::TempDir dir("container");
  write_container(dir / "t.rstn", tensors);
  CHECK(read_container(dir / "t.rstn") == tensors);
  CHECK(try_find_tensor(tensors, "nope") == nullptr);
  CHECK(find_tensor(tensors, "v").name == "v");
  CHECK_THROWS_AS(find_tensor(tensors, "nope"), ShapeMismatchError);
  CHECK(decode_container(encode_container({})).empty());
}

TEST_CASE("container errors are distinct") {
  std::string bad = handmade_container();
  bad.replace(0, 4, "XXXX");
  CHECK_THROWS_AS(decode_container(bad), BadMagicError);

  std::string version = handmade_container();
  version[4] = 2;
  CHECK_THROWS_AS(decode_container(version), UnsupportedVersionError);

  const std::string whole = handmade_container();
  for (std::size_t cut : {2ul, 6ul, 10ul, 13ul, 15ul, 20ul, whole.size() - 1}) {
    CAPTURE(cut);
    if (cut < 8) {
      CHECK_THROWS_AS(decode_container(whole.substr(0, cut)), FormatError);
    } else {
      CHECK_THROWS_AS(decode_container(whole.substr(0, cut)), TruncatedRecordError);
    }
  }

  std::string dtype = handmade_container();
  dtype[8 + 4 + 3] = 7;
  CHECK_THROWS_AS(decode_container(dtype), UnknownDtypeError);

  std::string duplicate = handmade_container();
  duplicate += duplicate.substr(8);
  CHECK_THROWS_AS(decode_container(duplicate), FormatError);

  CHECK_THROWS_AS(read_container("/nonexistent/file.rstn"), FormatError);
}

TEST_CASE("manifest round trip and checks") {
  Manifest m;
  m.container = "x.rstn";
  m.layout = RotaryLayout::HalfSplit;
  m.head_dim = 64;
  m.n_layers = 2;
  m.tensors.push_back({"w", DType::F32, {2, 3}});
  const Manifest back = manifest_from_json(manifest_to_json(m));
  CHECK(back.container == "x.rstn");
  CHECK(back.layout == RotaryLayout::HalfSplit);
  CHECK(back.head_dim == 64);
  CHECK(back.n_layers == 2);
  CHECK_FALSE(back.n_heads.has_value());
  CHECK(back.tensors.size() == 1);
  CHECK(back.tensors[0].shape == std::vector<std::uint64_t>{2, 3});

  CHECK_THROWS_AS(manifest_from_json("{not json"), FormatError);
  CHECK_THROWS_AS(manifest_from_json(R"({"container": "x.rstn"})"), LayoutError);
  CHECK_THROWS_AS(manifest_from_json(R"({"container": "x.rstn", "layout": "diagonal"})"),
                  LayoutError);
  CHECK_THROWS_AS(
      manifest_from_json(
          R"({"container": "x", "layout": "interleaved", "tensors": [{"name": "a", "dtype": "f16", "shape": [1]}]})"),
      UnknownDtypeError);
  CHECK(parse_layout("interleaved") == RotaryLayout::Interleaved);
  CHECK(parse_layout("half_split") == RotaryLayout::HalfSplit);
}

TEST_CASE("bundle checks the manifest against the container") {
  oracle::TempDir dir("bundle");
  Rng rng(2);
  const std::vector<Tensor> tensors{Tensor::from_matrix("w", random_matrix(rng, 2, 3), DType::F32)};
  const auto path = write_bundle(dir.path(), "b", tensors, {});
  CHECK(read_bundle(path).tensors == tensors);

  nlohmann::json doc = nlohmann::json::parse(oracle::slurp(path));
  doc["tensors"][0]["shape"][1] = 4;
  oracle::spit(path, doc.dump());
  CHECK_THROWS_AS(read_bundle(path), ShapeMismatchError);
}

TEST_CASE("activation dumps round trip") {
  const ActivationTrace trace = small_trace(4);
  oracle::TempDir dir("dump");
  const auto path = export_activations(trace, dir.path(), "acts", RotaryLayout::Interleaved, DType::F64);
  const ActivationTrace back = ingest_activations(path);
  CHECK(back.n_layers == trace.n_layers);
  CHECK(back.n_heads == trace.n_heads);
  CHECK(back.head_dim == trace.head_dim);
  CHECK(back.seq_len == trace.seq_len);
  for (const HeadIndex h : trace.head_indices()) {
    CHECK(back.at(h).queries == trace.at(h).queries);
    CHECK(back.at(h).keys == trace.at(h).keys);
    CHECK(back.at(h).probs == trace.at(h).probs);
  }
  const auto tensors = read_container(dir / "acts.rstn");
  CHECK(try_find_tensor(tensors, "L0.H1.q") != nullptr);
  CHECK(try_find_tensor(tensors, "L0.H1.k") != nullptr);
  CHECK(try_find_tensor(tensors, "L0.H0.score") != nullptr);
}

TEST_CASE("half-split dumps ingest to the interleaved layout") {
  const ActivationTrace trace = small_trace(5);
  oracle::TempDir dir("layouts");
  const auto inter = ingest_activations(
      export_activations(trace, dir.path(), "inter", RotaryLayout::Interleaved, DType::F32));
  const auto half = ingest_activations(
      export_activations(trace, dir.path(), "half", RotaryLayout::HalfSplit, DType::F32));
  const auto tensors = read_container(dir / "half.rstn");
  const Matrix<double> stored = find_tensor(tensors, "L0.H0.q").to_matrix<double>();
  CHECK(stored(3, 1) == doctest::Approx(trace.at({0, 0}).queries(3, 2)).epsilon(1e-6));

  const FrequencyVector theta = frequencies({8, 10000.0, 4096});
  for (const HeadIndex h : trace.head_indices()) {
    for (Eigen::Index m = 0; m < trace.seq_len; ++m) {
      for (Eigen::Index n = 0; n <= m; ++n) {
        const double a = rotary_dot(inter.at(h).queries.row(m).transpose(), 0,
                                    inter.at(h).keys.row(n).transpose(), 0, theta);
        const double b = rotary_dot(half.at(h).queries.row(m).transpose(), 0,
                                    half.at(h).keys.row(n).transpose(), 0, theta);
        CHECK(std::abs(a - b) <= 1e-6 * (1.0 + std::abs(a)));
      }
    }
  }
}

TEST_CASE("malformed activation dumps") {
  const ActivationTrace trace = small_trace(6);
  oracle::TempDir dir("badacts");
  std::vector<Tensor> tensors = trace_to_tensors(trace, RotaryLayout::Interleaved, DType::F64);

  std::vector<Tensor> missing;
  for (const Tensor& t : tensors) {
    if (t.name != "L0.H1.k") missing.push_back(t);
  }
  CHECK_THROWS_AS(trace_from_tensors(missing, RotaryLayout::Interleaved), ShapeMismatchError);

  std::vector<Tensor> noncausal = tensors;
  for (Tensor& t : noncausal) {
    if (t.name == "L0.H0.score") {
      Matrix<double> s = t.to_matrix<double>();
      s(3, 0) += 0.5;
      t = Tensor::from_matrix(t.name, s, DType::F64);
    }
  }
  CHECK_THROWS_AS(trace_from_tensors(noncausal, RotaryLayout::Interleaved), FormatError);

  std::vector<Tensor> mismatched = tensors;
  for (Tensor& t : mismatched) {
    if (t.name == "L0.H1.q") t = Tensor::from_matrix(t.name, Matrix<double>::Zero(12, 6), DType::F64);
  }
  CHECK_THROWS_AS(trace_from_tensors(mismatched, RotaryLayout::Interleaved), ShapeMismatchError);

  CHECK_THROWS_AS(trace_from_tensors({}, RotaryLayout::Interleaved), ShapeMismatchError);

  Manifest lying;
  lying.n_heads = 5;
  const auto path = write_bundle(dir.path(), "lying", tensors, lying);
  CHECK_THROWS_AS(ingest_activations(path), ShapeMismatchError);

  oracle::spit(dir / "garbage.rstn", "XXXX\x01\0\0\0");
  Manifest garbage;
  garbage.container = "garbage.rstn";
  oracle::spit(dir / "garbage.json", manifest_to_json(garbage));
  CHECK_THROWS_AS(ingest_activations(dir / "garbage.json"), BadMagicError);
}
