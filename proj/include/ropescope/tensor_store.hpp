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

#pragma once

/**
 * @file tensor_store.hpp
 * @brief The RSTN binary tensor container and its JSON manifest.
 *
 * Container layout, all integers little-endian:
 *
 *     "RSTN"            4 bytes magic
 *     version           u32 (currently 1)
 *     record*           until end of file
 *
 *     record:
 *       name_len        u32
 *       name            name_len bytes of UTF-8
 *       dtype           u8 (0 = f32, 1 = f64)
 *       rank            u8
 *       dims            rank x u64
 *       data            prod(dims) elements, row-major
 *
 * The manifest is a JSON document naming the container file, the rotary
 * pair layout of any query/key tensors ("interleaved" or "half_split"),
 * and the name, dtype and shape of each tensor. Model attributes that a
 * reader needs (head_dim, rope base, layer and head counts) ride along as
 * optional fields.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ropescope/rope.hpp"

namespace ropescope {

inline constexpr char kContainerMagic[4] = {'R', 'S', 'T', 'N'};
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

struct Tensor {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<std::byte> data;  // little-endian, row-major

  std::uint64_t element_count() const;
  bool operator==(const Tensor&) const = default;

  /// Rank-1 tensors come back as a single row.
  template <typename Scalar>
  Matrix<Scalar> to_matrix() const;

  template <typename Derived>
  static Tensor from_matrix(std::string name, const Eigen::MatrixBase<Derived>& m, DType dtype);

  template <typename Derived>
  static Tensor from_vector(std::string name, const Eigen::MatrixBase<Derived>& v, DType dtype);
};

std::string encode_container(const std::vector<Tensor>& tensors);
std::vector<Tensor> decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_container(const std::filesystem::path& path);

const Tensor& find_tensor(const std::vector<Tensor>& tensors, std::string_view name);
const Tensor* try_find_tensor(const std::vector<Tensor>& tensors, std::string_view name);

enum class RotaryLayout { Interleaved, HalfSplit };

std::string_view layout_name(RotaryLayout layout);
RotaryLayout parse_layout(std::string_view name);

struct TensorInfo {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
};

struct Manifest {
  std::string container;  // relative to the manifest's directory
  RotaryLayout layout = RotaryLayout::Interleaved;
  std::vector<TensorInfo> tensors;
  std::optional<int> head_dim;
  std::optional<double> rope_base;
  std::optional<int> n_layers;
  std::optional<int> n_heads;
};

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(std::string_view text);
Manifest read_manifest(const std::filesystem::path& path);

/// Writes `<dir>/<stem>.rstn` and `<dir>/<stem>.json`; returns the manifest path.
std::filesystem::path write_bundle(const std::filesystem::path& dir, const std::string& stem,
                                   const std::vector<Tensor>& tensors, Manifest manifest);

struct Bundle {
  Manifest manifest;
  std::vector<Tensor> tensors;
};

/// Reads a manifest and its container, checking that every manifest entry
/// is present with the declared dtype and shape.
Bundle read_bundle(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------

namespace detail {

void store_element(std::byte* dst, DType dtype, double value);
double load_element(const std::byte* src, DType dtype);

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> Tensor::to_matrix() const {
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  if (shape.size() == 1) {
    cols = static_cast<Eigen::Index>(shape[0]);
  } else if (shape.size() == 2) {
    rows = static_cast<Eigen::Index>(shape[0]);
    cols = static_cast<Eigen::Index>(shape[1]);
  } else if (!shape.empty()) {
    throw std::invalid_argument("tensor " + name + " has rank " + std::to_string(shape.size()) +
                                "; only rank <= 2 maps onto a matrix");
  }
  Matrix<Scalar> out(rows, cols);
  const std::size_t width = dtype_size(dtype);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<Scalar>(
        detail::load_element(data.data() + static_cast<std::size_t>(i) * width, dtype));
  }
  return out;
}

template <typename Derived>
Tensor Tensor::from_matrix(std::string name, const Eigen::MatrixBase<Derived>& m, DType dtype) {
  Tensor t;
  t.name = std::move(name);
  t.dtype = dtype;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()) * dtype_size(dtype));
  std::size_t offset = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      detail::store_element(t.data.data() + offset, dtype, static_cast<double>(m(r, c)));
      offset += dtype_size(dtype);
    }
  }
  return t;
}

template <typename Derived>
Tensor Tensor::from_vector(std::string name, const Eigen::MatrixBase<Derived>& v, DType dtype) {
  Tensor t = from_matrix(std::move(name), v.reshaped(1, v.size()), dtype);
  t.shape = {static_cast<std::uint64_t>(v.size())};
  return t;
}

}  // namespace ropescope
