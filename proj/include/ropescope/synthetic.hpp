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

#include <cstdint>
#include <set>

#include "ropescope/trace.hpp"

namespace ropescope {

// Single-layer trace with a known answer. Planted heads share one raw
// query/key direction whose per-pair alignment grows linearly with the pair
// index, so low-frequency pairs dominate and, as distance grows and the
// faster pairs lose phase coherence, the dominant dimension climbs with
// log distance. Noise heads draw raw queries and keys i.i.d. N(0, 1), which
// makes the decomposition statistically independent of distance.
struct SyntheticTraceSpec {
  std::int64_t seq_len = 1024;
  int head_dim = 128;
  double base = 10000.0;
  int planted_heads = 4;
  int noise_heads = 4;
  double planted_strength = 10.0;  // alignment of the top pair
  double planted_jitter = 0.1;     // per-token N(0, jitter^2) perturbation
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticTrace {
  ActivationTrace trace;
  std::set<HeadIndex> planted;
};

SyntheticTrace make_synthetic_trace(const SyntheticTraceSpec& spec);

/// Builds a head trace from raw (unrotated) queries and keys at positions
/// 0..T-1: rotates them, scores with 1/sqrt(d) scaling and applies the causal
/// softmax.
HeadTrace head_trace_from_raw(const Matrix<double>& raw_queries, const Matrix<double>& raw_keys,
                              const FrequencyVector& theta);

}  // namespace ropescope
