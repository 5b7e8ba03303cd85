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
 * @file analysis.hpp
 * @brief Query/key pair sampling, distance curves, head scoring and mask
 * selection.
 *
 * The pipeline for one head: pick query/key pairs from its attention
 * pattern, decompose each pair's score into per-frequency contributions,
 * reduce every pair to its dominant dimension, average per relative
 * distance, and rank-correlate distance against the averaged dimension.
 * Heads with a strong correlation are the positional heads.
 */

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ropescope/contrib.hpp"
#include "ropescope/trace.hpp"

namespace ropescope {

struct TokenPair {
  std::int64_t query_pos = 0;
  std::int64_t key_pos = 0;

  std::int64_t distance() const { return query_pos - key_pos; }
  bool operator==(const TokenPair&) const = default;
};

struct PairSample {
  HeadIndex head;
  TokenPair pair;
  double attention_score = 0.0;

  bool operator==(const PairSample&) const = default;
};

struct DistanceDimRecord {
  std::int64_t distance = 0;
  double dominant_dim = 0.0;
};

struct CurvePoint {
  std::int64_t distance = 0;
  double mean_dominant_dim = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

using DistanceCurve = std::vector<CurvePoint>;

struct HeadScore {
  HeadIndex head;
  std::optional<double> rho;  // empty when the correlation is undefined
  std::size_t n_points = 0;

  bool defined() const { return rho.has_value(); }
};

enum class RankBy { SignedRho, AbsoluteRho };

enum class MaskStrategy { Top, Random };

struct MaskProvenance {
  MaskStrategy strategy = MaskStrategy::Top;
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

struct MaskSet {
  std::set<HeadIndex> entries;
  std::optional<MaskProvenance> provenance;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  bool contains(HeadIndex index) const { return entries.count(index) != 0; }
};

/// rate * T pairs drawn uniformly from the causal triangle {(m, n) : n <= m < T}.
std::vector<TokenPair> sample_random_pairs(std::int64_t token_count, std::int64_t rate,
                                           std::uint64_t seed);

/// For each query row m, the min(k, m + 1) causal keys with the highest score
/// (ties to the lower key index). Entries above the diagonal are ignored.
std::vector<PairSample> sample_top_attention_pairs(const Matrix<double>& scores,
                                                   std::int64_t per_query_k,
                                                   HeadIndex head = {});

/// Per-pair contribution vectors from a head's rotated queries and keys.
ContributionVector trace_contributions(const HeadTrace& head, const TokenPair& pair);

std::vector<DistanceDimRecord> dominant_records(const HeadTrace& head,
                                                std::span<const PairSample> pairs);

/// Mean dominant dimension per exact distance, ascending. The result does not
/// depend on record order.
DistanceCurve aggregate_by_distance(std::span<const DistanceDimRecord> records);

/// Pearson correlation of fractional ranks. Empty when either input is
/// constant.
std::optional<double> spearman_correlation(std::span<const double> x, std::span<const double> y);

/// Average (fractional) ranks, 1-based.
std::vector<double> fractional_ranks(std::span<const double> values);

HeadScore score_curve(HeadIndex head, const DistanceCurve& curve);

/// Scores every head and orders them best-first. Heads with an undefined
/// correlation come last; equal keys keep (layer, head) order.
std::vector<HeadScore> score_heads(const std::map<HeadIndex, DistanceCurve>& curves,
                                   RankBy rank_by = RankBy::SignedRho);

void sort_scores(std::vector<HeadScore>& scores, RankBy rank_by = RankBy::SignedRho);

/// round-half-up(fraction * total), at least 1 when fraction > 0.
std::size_t mask_size(double fraction, std::size_t total);

MaskSet select_mask(std::span<const HeadScore> scores, MaskStrategy strategy, double fraction,
                    std::uint64_t seed, RankBy rank_by = RankBy::SignedRho);

enum class HeatmapStatistic { MeanTopK, MeanDominantDim };

struct Heatmap {
  Eigen::MatrixXd values;                                  // n_layers x n_heads
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> present;

  bool has(HeadIndex index) const { return present(index.layer, index.head); }
};

/// Per-head mean, over sampled pairs, of the mean index of each pair's top-k
/// contributing dimensions. Heads without samples are marked absent.
Heatmap dimension_heatmap(const std::map<HeadIndex, std::vector<ContributionVector>>& samples,
                          int n_layers, int n_heads, int top_k = 5,
                          HeatmapStatistic statistic = HeatmapStatistic::MeanTopK);

}  // namespace ropescope
