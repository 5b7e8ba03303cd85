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
 * @file contrib.hpp
 * @brief Per-frequency decomposition of a rotary attention score.
 *
 * A rotated query/key dot product splits into d/2 terms g_i, one per
 * rotation frequency, with sum(g) equal to the full score. Two independent
 * routes produce g: the elementwise product of the rotated vectors folded
 * pairwise, and a closed form over the raw vectors and their relative
 * distance. Everything here is computed in double precision.
 */

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "ropescope/rope.hpp"

namespace ropescope {

struct ContributionVector {
  Eigen::VectorXd g;
  std::int64_t query_pos = 0;
  std::int64_t key_pos = 0;

  /// Sum of g in ascending index order.
  double total() const {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) sum += g[i];
    return sum;
  }
  Eigen::Index size() const { return g.size(); }
};

/// h_i = a_i * b_i.
template <typename DerivedA, typename DerivedB>
Eigen::VectorXd hadamard_contrib(const Eigen::MatrixBase<DerivedA>& a,
                                 const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("hadamard_contrib: lengths differ");
  }
  Eigen::VectorXd h(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    h[i] = static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return h;
}

/// g_i = h_2i + h_2i+1.
template <typename Derived>
ContributionVector pair_contributions(const Eigen::MatrixBase<Derived>& h,
                                      std::int64_t query_pos = 0, std::int64_t key_pos = 0) {
  if (h.size() % 2 != 0) {
    throw std::invalid_argument("pair_contributions: odd length");
  }
  ContributionVector out;
  out.query_pos = query_pos;
  out.key_pos = key_pos;
  out.g.resize(h.size() / 2);
  for (Eigen::Index i = 0; i < out.g.size(); ++i) {
    out.g[i] = static_cast<double>(h[2 * i]) + static_cast<double>(h[2 * i + 1]);
  }
  return out;
}

/// g_i = (q_2i k_2i + q_2i+1 k_2i+1) cos((m-n) theta_i)
///     + (q_2i k_2i+1 - q_2i+1 k_2i) sin((m-n) theta_i), on raw vectors.
template <typename DerivedQ, typename DerivedK>
ContributionVector closed_form_contributions(const Eigen::MatrixBase<DerivedQ>& q,
                                             const Eigen::MatrixBase<DerivedK>& k,
                                             std::int64_t m, std::int64_t n,
                                             const FrequencyVector& theta) {
  if (q.size() != k.size()) {
    throw std::invalid_argument("closed_form_contributions: lengths differ");
  }
  detail::check_rotary_size(q.size(), theta);
  const double rel = static_cast<double>(m - n);
  ContributionVector out;
  out.query_pos = m;
  out.key_pos = n;
  out.g.resize(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double q0 = static_cast<double>(q[2 * i]);
    const double q1 = static_cast<double>(q[2 * i + 1]);
    const double k0 = static_cast<double>(k[2 * i]);
    const double k1 = static_cast<double>(k[2 * i + 1]);
    const double angle = rel * theta[i];
    out.g[i] = (q0 * k0 + q1 * k1) * std::cos(angle) + (q0 * k1 - q1 * k0) * std::sin(angle);
  }
  return out;
}

/// Rotate, multiply elementwise, fold pairs.
template <typename DerivedQ, typename DerivedK>
ContributionVector rotated_contributions(const Eigen::MatrixBase<DerivedQ>& q, std::int64_t m,
                                         const Eigen::MatrixBase<DerivedK>& k, std::int64_t n,
                                         const FrequencyVector& theta) {
  const Eigen::VectorXd qd = q.template cast<double>();
  const Eigen::VectorXd kd = k.template cast<double>();
  return pair_contributions(
      hadamard_contrib(apply_rotation(qd, m, theta), apply_rotation(kd, n, theta)), m, n);
}

/// softmax(g) . [0, 1, ..., d/2 - 1]; max-subtracted, so any finite g is safe.
double dominant_dimension(const Eigen::VectorXd& g);

inline double dominant_dimension(const ContributionVector& c) { return dominant_dimension(c.g); }

/// Indices of the `count` largest entries, largest first, lower index on ties.
std::vector<int> top_contributing_dims(const Eigen::VectorXd& g, int count);

inline std::vector<int> top_contributing_dims(const ContributionVector& c, int count) {
  return top_contributing_dims(c.g, count);
}

}  // namespace ropescope
