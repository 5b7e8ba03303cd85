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

#include "ropescope/synthetic.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ropescope/random.hpp"

namespace ropescope {

void SyntheticTraceSpec::validate() const {
  FreqSpec{head_dim, base, 1}.validate();
  if (seq_len < 2) throw std::invalid_argument("synthetic trace: seq_len must be >= 2");
  if (planted_heads < 0 || noise_heads < 0 || planted_heads + noise_heads < 1) {
    throw std::invalid_argument("synthetic trace: need at least one head");
  }
  if (!(planted_strength > 0.0) || !(planted_jitter >= 0.0)) {
    throw std::invalid_argument("synthetic trace: strength must be > 0 and jitter >= 0");
  }
}

HeadTrace head_trace_from_raw(const Matrix<double>& raw_queries, const Matrix<double>& raw_keys,
                              const FrequencyVector& theta) {
  if (raw_queries.rows() != raw_keys.rows() || raw_queries.cols() != raw_keys.cols()) {
    throw std::invalid_argument("head_trace_from_raw: query/key shapes differ");
  }
  HeadTrace head;
  head.queries = rotate_rows(raw_queries, theta);
  head.keys = rotate_rows(raw_keys, theta);
  const double scale = 1.0 / std::sqrt(static_cast<double>(raw_queries.cols()));
  head.logits = (head.queries * head.keys.transpose()) * scale;
  head.logits.triangularView<Eigen::StrictlyUpper>().setConstant(
      -std::numeric_limits<double>::infinity());
  head.probs = causal_softmax(head.logits);
  return head;
}

SyntheticTrace make_synthetic_trace(const SyntheticTraceSpec& spec) {
  spec.validate();
  const FrequencyVector theta = frequencies(FreqSpec{spec.head_dim, spec.base, 1});
  const int total = spec.planted_heads + spec.noise_heads;
  const Eigen::Index t = spec.seq_len;
  const Eigen::Index d = spec.head_dim;
  const Eigen::Index pairs = d / 2;

  // Planted heads sit at seeded slots rather than a fixed prefix.
  std::vector<int> slots(static_cast<std::size_t>(total));
  std::iota(slots.begin(), slots.end(), 0);
  Rng order_rng(derive_seed(spec.seed, 0x51075ULL));
  for (std::size_t i = slots.size(); i > 1; --i) {
    std::swap(slots[i - 1], slots[static_cast<std::size_t>(uniform_below(order_rng, i))]);
  }

  Vector<double> direction(d);
  for (Eigen::Index i = 0; i < pairs; ++i) {
    const double alignment =
        pairs > 1 ? spec.planted_strength * static_cast<double>(i) / static_cast<double>(pairs - 1)
                  : spec.planted_strength;
    direction[2 * i] = direction[2 * i + 1] = std::sqrt(alignment / 2.0);
  }

  SyntheticTrace out{ActivationTrace(1, total, spec.head_dim, spec.seq_len), {}};
  for (int h = 0; h < total; ++h) {
    const bool planted = slots[static_cast<std::size_t>(h)] < spec.planted_heads;
    Rng rng(derive_seed(spec.seed, 1, static_cast<std::uint64_t>(h)));
    Matrix<double> q(t, d);
    Matrix<double> k(t, d);
    for (Matrix<double>* raw : {&q, &k}) {
      for (Eigen::Index r = 0; r < t; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) {
          (*raw)(r, c) = planted ? direction[c] + spec.planted_jitter * standard_normal(rng)
                                 : standard_normal(rng);
        }
      }
    }
    out.trace.at({0, h}) = head_trace_from_raw(q, k, theta);
    if (planted) out.planted.insert({0, h});
  }
  return out;
}

}  // namespace ropescope
