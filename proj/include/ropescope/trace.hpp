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

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ropescope/rope.hpp"

namespace ropescope {

struct HeadIndex {
  int layer = 0;
  int head = 0;

  auto operator<=>(const HeadIndex&) const = default;
};

std::string to_string(const HeadIndex& index);

// Attention activations of one head over a sequence of T tokens.
struct HeadTrace {
  Matrix<double> queries;  // T x head_dim, rotated, interleaved layout
  Matrix<double> keys;     // T x head_dim, rotated, interleaved layout
  Matrix<double> logits;   // T x T pre-softmax scores, -inf above the diagonal
  Matrix<double> probs;    // T x T causal softmax rows
};

struct ActivationTrace {
  int n_layers = 0;
  int n_heads = 0;
  int head_dim = 0;
  std::int64_t seq_len = 0;
  std::vector<HeadTrace> heads;  // layer-major

  ActivationTrace() = default;
  ActivationTrace(int layers, int heads_per_layer, int dim, std::int64_t tokens);

  HeadTrace& at(HeadIndex index);
  const HeadTrace& at(HeadIndex index) const;
  bool contains(HeadIndex index) const {
    return index.layer >= 0 && index.layer < n_layers && index.head >= 0 && index.head < n_heads;
  }
  std::vector<HeadIndex> head_indices() const;

  /// Throws ShapeMismatchError on any tensor whose shape disagrees with the
  /// declared dimensions, or InvariantError when a probability row does not
  /// sum to 1 within `row_sum_tolerance`.
  void validate(double row_sum_tolerance = 1e-6) const;
};

/// Row-wise causal softmax of a T x T score matrix; entries above the
/// diagonal are ignored and come back as 0.
Matrix<double> causal_softmax(const Matrix<double>& logits);

}  // namespace ropescope
