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

#include "ropescope/contrib.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace ropescope {

double dominant_dimension(const Eigen::VectorXd& g) {
  if (g.size() == 0) throw std::invalid_argument("dominant_dimension: empty contribution vector");
  if (!g.allFinite()) throw std::invalid_argument("dominant_dimension: non-finite contribution");
  const double peak = g.maxCoeff();
  double norm = 0.0;
  double weighted = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double w = std::exp(g[i] - peak);
    norm += w;
    weighted += w * static_cast<double>(i);
  }
  const double value = weighted / norm;
  // Rounding can only push the ratio past the ends by an ulp.
  return std::clamp(value, 0.0, static_cast<double>(g.size() - 1));
}

std::vector<int> top_contributing_dims(const Eigen::VectorXd& g, int count) {
  if (count < 1 || count > g.size()) {
    throw std::invalid_argument("top_contributing_dims: count " + std::to_string(count) +
                                " outside [1, " + std::to_string(g.size()) + "]");
  }
  std::vector<int> order(static_cast<std::size_t>(g.size()));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + count, order.end(), [&](int a, int b) {
    if (g[a] != g[b]) return g[a] > g[b];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(count));
  return order;
}

}  // namespace ropescope
