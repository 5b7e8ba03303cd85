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

#include <limits>
#include <numeric>

#include "oracle.hpp"
#include "ropescope/contrib.hpp"
#include "ropescope/random.hpp"

using namespace ropescope;

namespace {

Eigen::VectorXd random_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = standard_normal(rng);
  return v;
}

}  // namespace

TEST_CASE("hadamard products") {
  const Eigen::VectorXd h = hadamard_contrib(Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4));
  CHECK(h == Eigen::Vector2d(3, 8));
  CHECK(hadamard_contrib(Eigen::Vector3d::Zero(), Eigen::Vector3d(5, -1, 2)).isZero(0.0));
  CHECK_THROWS_AS(hadamard_contrib(Eigen::Vector2d(1, 2), Eigen::Vector3d(1, 2, 3)),
                  std::invalid_argument);

  Rng rng(1);
  const Eigen::VectorXd a = random_vector(rng, 64);
  const Eigen::VectorXd b = random_vector(rng, 64);
  const Eigen::VectorXd p = hadamard_contrib(a, b);
  double dot = 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < 64; ++i) {
    dot += a[i] * b[i];
    sum += p[i];
  }
  CHECK(sum == dot);
}

TEST_CASE("pair contributions") {
  const ContributionVector c = pair_contributions(Eigen::Vector4d(3, 8, -1, 2));
  CHECK(c.g == Eigen::Vector2d(11, 1));
  CHECK(pair_contributions(Eigen::Vector2d(2.5, -1)).g == Eigen::VectorXd::Constant(1, 1.5));
  CHECK_THROWS_AS(pair_contributions(Eigen::Vector3d(1, 2, 3)), std::invalid_argument);

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd h = random_vector(rng, 128);
    const double total = pair_contributions(h).total();
    const double direct = h.sum();
    CHECK(std::abs(total - direct) <= 1e-12 * h.cwiseAbs().sum());
  }
}

TEST_CASE("closed form contributions") {
  const FrequencyVector one = FrequencyVector::Ones(1);
  const ContributionVector same =
      closed_form_contributions(Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4), 6, 6, one);
  CHECK(same.g[0] == 11.0);
  CHECK(same.query_pos == 6);
  CHECK(same.key_pos == 6);

  for (std::int64_t rel : {1, 2, 5, 17}) {
    const ContributionVector cross =
        closed_form_contributions(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), 20 + rel, 20, one);
    CHECK(cross.g[0] == doctest::Approx(std::sin(static_cast<double>(rel))).epsilon(1e-14));
  }
  CHECK_THROWS_AS(closed_form_contributions(Eigen::Vector2d(1, 0), Eigen::Vector4d::Ones(), 0, 0,
                                            one),
                  std::invalid_argument);
}

TEST_CASE("closed form matches the rotated path and the full dot product") {
  Rng rng(7);
  const FrequencyVector theta = frequencies({128, 10000.0, 4096});
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::VectorXd q = random_vector(rng, 128);
    const Eigen::VectorXd k = random_vector(rng, 128);
    const auto n = static_cast<std::int64_t>(uniform_below(rng, 100001));
    const auto m = static_cast<std::int64_t>(uniform_below(rng, 100001));
    const ContributionVector closed = closed_form_contributions(q, k, m, n, theta);
    const ContributionVector rotated = rotated_contributions(q, m, k, n, theta);
    for (Eigen::Index i = 0; i < 64; ++i) {
      const double scale = std::max(std::abs(rotated.g[i]),
                                    q.segment(2 * i, 2).norm() * k.segment(2 * i, 2).norm());
      CHECK(std::abs(closed.g[i] - rotated.g[i]) <= 1e-9 * scale);
    }
    const Eigen::VectorXd qm = oracle::rotate(q, m, theta);
    const Eigen::VectorXd kn = oracle::rotate(k, n, theta);
    const double dot = qm.dot(kn);
    CHECK(std::abs(rotated.total() - dot) <= 1e-9 * (1.0 + std::abs(dot)));
    CHECK(std::abs(closed.total() - dot) <= 1e-9 * (1.0 + std::abs(dot)));
  }
}

TEST_CASE("dominant dimension") {
  CHECK(dominant_dimension(Eigen::VectorXd::Constant(4, 0.7)) == doctest::Approx(1.5).epsilon(1e-15));
  // 6 / (e^10 + 3)
  CHECK(dominant_dimension(Eigen::Vector4d(10, 0, 0, 0)) ==
        doctest::Approx(0.0002723624828621335).epsilon(1e-12));
  CHECK(dominant_dimension(Eigen::VectorXd::Constant(1, 3.0)) == 0.0);

  CHECK_THROWS_AS(dominant_dimension(Eigen::VectorXd()), std::invalid_argument);
  CHECK_THROWS_AS(dominant_dimension(Eigen::Vector2d(1, std::numeric_limits<double>::quiet_NaN())),
                  std::invalid_argument);
  CHECK_THROWS_AS(dominant_dimension(Eigen::Vector2d(1, std::numeric_limits<double>::infinity())),
                  std::invalid_argument);

  ContributionVector c;
  c.g = Eigen::Vector4d(0, 0, 0, 10);
  CHECK(dominant_dimension(c) == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("dominant dimension properties") {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd g = random_vector(rng, 64) * (1.0 + 499.0 * uniform01(rng));
    const double value = dominant_dimension(g);
    CHECK(value >= 0.0);
    CHECK(value <= 63.0);
    CHECK(value == doctest::Approx(oracle::softmax_weighted_index(g)).epsilon(1e-12));

    const double shift = 1000.0 * (uniform01(rng) - 0.5);
    const Eigen::VectorXd shifted = (g.array() + shift).matrix();
    CHECK(std::abs(dominant_dimension(shifted) - value) <= 1e-12 * std::max(1.0, value));

    g = random_vector(rng, 64);
    Eigen::Index argmax = 0;
    g.maxCoeff(&argmax);
    g[argmax] += 0.05;
    CHECK(std::abs(dominant_dimension(Eigen::VectorXd(1000.0 * g)) - static_cast<double>(argmax)) <=
          1e-3);
  }
  const Eigen::VectorXd extreme = (Eigen::VectorXd(4) << 500, -500, 500, -500).finished();
  CHECK(dominant_dimension(extreme) == doctest::Approx(1.0));
}

TEST_CASE("top contributing dims") {
  CHECK(top_contributing_dims(Eigen::Vector4d(0.1, 5, -2, 3), 2) == std::vector<int>{1, 3});
  CHECK(top_contributing_dims(Eigen::VectorXd::Constant(6, 2.0), 3) == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(top_contributing_dims(Eigen::Vector4d::Zero(), 0), std::invalid_argument);
  CHECK_THROWS_AS(top_contributing_dims(Eigen::Vector4d::Zero(), 5), std::invalid_argument);

  Rng rng(12);
  const Eigen::VectorXd g = random_vector(rng, 64);
  std::vector<int> all = top_contributing_dims(g, 64);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(g[all[i - 1]] >= g[all[i]]);
  std::sort(all.begin(), all.end());
  std::vector<int> expected(64);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(all == expected);
}
