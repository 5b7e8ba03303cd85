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

#include "ropescope/trace.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ropescope/errors.hpp"

namespace ropescope {

std::string to_string(const HeadIndex& index) {
  return "L" + std::to_string(index.layer) + ".H" + std::to_string(index.head);
}

ActivationTrace::ActivationTrace(int layers, int heads_per_layer, int dim, std::int64_t tokens)
    : n_layers(layers), n_heads(heads_per_layer), head_dim(dim), seq_len(tokens) {
  heads.resize(static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads_per_layer));
}

HeadTrace& ActivationTrace::at(HeadIndex index) {
  if (!contains(index)) throw std::out_of_range("trace has no head " + to_string(index));
  return heads[static_cast<std::size_t>(index.layer * n_heads + index.head)];
}

const HeadTrace& ActivationTrace::at(HeadIndex index) const {
  if (!contains(index)) throw std::out_of_range("trace has no head " + to_string(index));
  return heads[static_cast<std::size_t>(index.layer * n_heads + index.head)];
}

std::vector<HeadIndex> ActivationTrace::head_indices() const {
  std::vector<HeadIndex> out;
  out.reserve(heads.size());
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) out.push_back({l, h});
  }
  return out;
}

void ActivationTrace::validate(double row_sum_tolerance) const {
  if (heads.size() != static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(n_heads)) {
    throw ShapeMismatchError("trace head count does not match layers x heads");
  }
  const auto check = [](const Matrix<double>& m, Eigen::Index rows, Eigen::Index cols,
                        const std::string& what) {
    if (m.rows() != rows || m.cols() != cols) {
      throw ShapeMismatchError(what + " has shape " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                               "x" + std::to_string(cols));
    }
  };
  for (const HeadIndex index : head_indices()) {
    const HeadTrace& head = at(index);
    const std::string tag = to_string(index);
    check(head.queries, seq_len, head_dim, tag + ".q");
    check(head.keys, seq_len, head_dim, tag + ".k");
    check(head.probs, seq_len, seq_len, tag + ".score");
    if (head.logits.size() != 0) check(head.logits, seq_len, seq_len, tag + ".logit");
    for (Eigen::Index m = 0; m < seq_len; ++m) {
      const double sum = head.probs.row(m).head(m + 1).sum();
      if (std::abs(sum - 1.0) > row_sum_tolerance) {
        throw InvariantError(tag + " attention row " + std::to_string(m) + " sums to " +
                             std::to_string(sum));
      }
    }
  }
}

Matrix<double> causal_softmax(const Matrix<double>& logits) {
  if (logits.rows() != logits.cols()) throw std::invalid_argument("causal_softmax: not square");
  const Eigen::Index t = logits.rows();
  Matrix<double> probs = Matrix<double>::Zero(t, t);
  for (Eigen::Index m = 0; m < t; ++m) {
    const auto row = logits.row(m).head(m + 1);
    const double peak = row.maxCoeff();
    double norm = 0.0;
    for (Eigen::Index n = 0; n <= m; ++n) {
      probs(m, n) = std::exp(row[n] - peak);
      norm += probs(m, n);
    }
    probs.row(m).head(m + 1) /= norm;
  }
  return probs;
}

}  // namespace ropescope
