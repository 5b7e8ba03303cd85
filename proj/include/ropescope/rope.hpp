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
 * @file rope.hpp
 * @brief Rotary position embedding: frequencies, rotations, rotary dot
 * products and the length-extrapolation transforms.
 *
 * Rotations use the interleaved pair layout: dimension pair i is
 * (2i, 2i + 1) and rotates at rate theta_i. Angles are always evaluated
 * in double precision from exact integer positions, whatever the scalar
 * type of the vectors being rotated.
 */

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>

#include <Eigen/Core>

namespace ropescope {

using FrequencyVector = Eigen::VectorXd;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FreqSpec {
  int head_dim = 128;
  double base = 10000.0;
  std::int64_t train_len = 4096;

  void validate() const;
  int pair_count() const { return head_dim / 2; }
};

struct NoScaling {};

struct LinearInterpolation {
  double scale = 1.0;
};

// Per-dimension blend between interpolated and original frequencies, keyed on
// how many full rotations a dimension completes over the training window.
struct Yarn {
  double scale = 1.0;
  double low_rotations = 1.0;    // at or below: pure interpolation
  double high_rotations = 32.0;  // at or above: unchanged
  bool temperature = true;
};

struct BaseScale {
  double new_base = 10000.0;
};

// Relative distances beyond the neighbor window are compressed by floor
// division with the group size.
struct SelfExtend {
  std::int64_t group_size = 1;
  std::int64_t neighbor_window = 0;
};

using ScalingMethod = std::variant<NoScaling, LinearInterpolation, Yarn, BaseScale, SelfExtend>;

void validate(const ScalingMethod& method);

/// theta_i = base^(-2i/d) for i in [0, d/2).
FrequencyVector frequencies(const FreqSpec& spec);

struct ScaledFrequencies {
  FrequencyVector theta;
  // Multiplier applied to rotated queries and keys; 1 unless a YaRN
  // temperature is in effect.
  double attention_scale = 1.0;
};

/// Applies a frequency-rescaling method. SelfExtend leaves frequencies
/// untouched and is rejected here; it acts through remap_distance().
ScaledFrequencies transform_frequencies(const FreqSpec& spec, const ScalingMethod& method);

/// The YaRN ramp weight for one dimension (0 = interpolate, 1 = keep).
double yarn_ramp(double theta, std::int64_t train_len, const Yarn& yarn);

std::int64_t remap_distance(std::int64_t rel, const SelfExtend& method);

struct TrigProfile {
  Eigen::VectorXd cosines;
  // Smallest i with distance * theta_i <= pi (d/2 when there is none).
  // Pairs below it have wrapped phases.
  int wrap_boundary = 0;
};

TrigProfile trig_profile(std::int64_t distance, const FrequencyVector& theta);
int wrap_boundary(std::int64_t distance, const FrequencyVector& theta);

template <typename Scalar>
struct HeadVector {
  Vector<Scalar> values;
  std::int64_t position = 0;
};

namespace detail {

inline void check_rotary_size(Eigen::Index size, const FrequencyVector& theta) {
  if (size != 2 * theta.size()) {
    throw std::invalid_argument("rotary vector length " + std::to_string(size) +
                                " does not match 2 x " + std::to_string(theta.size()) +
                                " frequencies");
  }
}

}  // namespace detail

/// Rotates every pair (v_2i, v_2i+1) by position * theta_i.
template <typename Derived>
Vector<typename Derived::Scalar> apply_rotation(const Eigen::MatrixBase<Derived>& v,
                                                std::int64_t position,
                                                const FrequencyVector& theta) {
  using Scalar = typename Derived::Scalar;
  detail::check_rotary_size(v.size(), theta);
  const double pos = static_cast<double>(position);
  Vector<Scalar> out(v.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double angle = pos * theta[i];
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = static_cast<double>(v[2 * i]);
    const double x1 = static_cast<double>(v[2 * i + 1]);
    out[2 * i] = static_cast<Scalar>(x0 * c - x1 * s);
    out[2 * i + 1] = static_cast<Scalar>(x0 * s + x1 * c);
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> apply_rotation(const HeadVector<Scalar>& v, const FrequencyVector& theta) {
  return apply_rotation(v.values, v.position, theta);
}

/// Rotates row t of `rows` by position first_position + t.
template <typename Derived>
Matrix<typename Derived::Scalar> rotate_rows(const Eigen::MatrixBase<Derived>& rows,
                                             const FrequencyVector& theta,
                                             std::int64_t first_position = 0) {
  detail::check_rotary_size(rows.cols(), theta);
  Matrix<typename Derived::Scalar> out(rows.rows(), rows.cols());
  for (Eigen::Index t = 0; t < rows.rows(); ++t) {
    out.row(t) = apply_rotation(rows.row(t).transpose(), first_position + t, theta).transpose();
  }
  return out;
}

/// q_m^T k_n, summed in ascending index order.
template <typename DerivedQ, typename DerivedK>
double rotary_dot(const Eigen::MatrixBase<DerivedQ>& q, std::int64_t m,
                  const Eigen::MatrixBase<DerivedK>& k, std::int64_t n,
                  const FrequencyVector& theta) {
  if (q.size() != k.size()) {
    throw std::invalid_argument("rotary_dot: query and key lengths differ");
  }
  const Eigen::VectorXd qd = q.template cast<double>();
  const Eigen::VectorXd kd = k.template cast<double>();
  const Eigen::VectorXd qm = apply_rotation(qd, m, theta);
  const Eigen::VectorXd kn = apply_rotation(kd, n, theta);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < qm.size(); ++i) sum += qm[i] * kn[i];
  return sum;
}

template <typename Scalar>
double rotary_dot(const HeadVector<Scalar>& q, const HeadVector<Scalar>& k,
                  const FrequencyVector& theta) {
  return rotary_dot(q.values, q.position, k.values, k.position, theta);
}

// Half-split layouts pair dimension j with j + d/2. These permute columns
// between that layout and the interleaved one used everywhere else.
template <typename Derived>
Matrix<typename Derived::Scalar> half_split_to_interleaved(const Eigen::MatrixBase<Derived>& rows) {
  const Eigen::Index d = rows.cols();
  if (d % 2 != 0) throw std::invalid_argument("half_split_to_interleaved: odd width");
  const Eigen::Index half = d / 2;
  Matrix<typename Derived::Scalar> out(rows.rows(), d);
  for (Eigen::Index j = 0; j < half; ++j) {
    out.col(2 * j) = rows.col(j);
    out.col(2 * j + 1) = rows.col(j + half);
  }
  return out;
}

template <typename Derived>
Matrix<typename Derived::Scalar> interleaved_to_half_split(const Eigen::MatrixBase<Derived>& rows) {
  const Eigen::Index d = rows.cols();
  if (d % 2 != 0) throw std::invalid_argument("interleaved_to_half_split: odd width");
  const Eigen::Index half = d / 2;
  Matrix<typename Derived::Scalar> out(rows.rows(), d);
  for (Eigen::Index j = 0; j < half; ++j) {
    out.col(j) = rows.col(2 * j);
    out.col(j + half) = rows.col(2 * j + 1);
  }
  return out;
}

}  // namespace ropescope
