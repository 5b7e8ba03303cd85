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

#include "ropescope/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ropescope/random.hpp"

namespace ropescope {

namespace {

// Inverse of u = m (m + 1) / 2 + n over the lower triangle.
TokenPair triangle_pair(std::uint64_t u) {
  auto m = static_cast<std::uint64_t>((std::sqrt(8.0 * static_cast<double>(u) + 1.0) - 1.0) / 2.0);
  while (m * (m + 1) / 2 > u) --m;
  while ((m + 1) * (m + 2) / 2 <= u) ++m;
  const std::uint64_t n = u - m * (m + 1) / 2;
  return {static_cast<std::int64_t>(m), static_cast<std::int64_t>(n)};
}

double rank_key(const HeadScore& s, RankBy rank_by) {
  return rank_by == RankBy::AbsoluteRho ? std::abs(*s.rho) : *s.rho;
}

}  // namespace

std::vector<TokenPair> sample_random_pairs(std::int64_t token_count, std::int64_t rate,
                                           std::uint64_t seed) {
  if (token_count < 2) throw std::invalid_argument("sample_random_pairs: need at least 2 tokens");
  if (rate < 1) throw std::invalid_argument("sample_random_pairs: rate must be >= 1");
  const auto t = static_cast<std::uint64_t>(token_count);
  const std::uint64_t cells = t * (t + 1) / 2;
  Rng rng(seed);
  std::vector<TokenPair> pairs;
  pairs.reserve(static_cast<std::size_t>(token_count * rate));
  for (std::int64_t i = 0; i < token_count * rate; ++i) {
    pairs.push_back(triangle_pair(uniform_below(rng, cells)));
  }
  return pairs;
}

std::vector<PairSample> sample_top_attention_pairs(const Matrix<double>& scores,
                                                   std::int64_t per_query_k, HeadIndex head) {
  if (scores.size() == 0) throw std::invalid_argument("sample_top_attention_pairs: empty matrix");
  if (scores.rows() != scores.cols()) {
    throw std::invalid_argument("sample_top_attention_pairs: score matrix is not square");
  }
  if (per_query_k < 1) throw std::invalid_argument("sample_top_attention_pairs: k must be >= 1");
  std::vector<PairSample> out;
  std::vector<std::int64_t> keys;
  for (Eigen::Index m = 0; m < scores.rows(); ++m) {
    keys.resize(static_cast<std::size_t>(m + 1));
    std::iota(keys.begin(), keys.end(), 0);
    const auto take = static_cast<std::size_t>(std::min<std::int64_t>(per_query_k, m + 1));
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(take), keys.end(),
                      [&](std::int64_t a, std::int64_t b) {
                        if (scores(m, a) != scores(m, b)) return scores(m, a) > scores(m, b);
                        return a < b;
                      });
    for (std::size_t j = 0; j < take; ++j) {
      out.push_back({head, {m, keys[j]}, scores(m, keys[j])});
    }
  }
  return out;
}

ContributionVector trace_contributions(const HeadTrace& head, const TokenPair& pair) {
  if (pair.key_pos > pair.query_pos || pair.key_pos < 0 || pair.query_pos >= head.queries.rows()) {
    throw std::out_of_range("token pair outside the causal range of the trace");
  }
  return pair_contributions(
      hadamard_contrib(head.queries.row(pair.query_pos), head.keys.row(pair.key_pos)),
      pair.query_pos, pair.key_pos);
}

std::vector<DistanceDimRecord> dominant_records(const HeadTrace& head,
                                                std::span<const PairSample> pairs) {
  std::vector<DistanceDimRecord> records;
  records.reserve(pairs.size());
  for (const PairSample& sample : pairs) {
    records.push_back({sample.pair.distance(),
                       dominant_dimension(trace_contributions(head, sample.pair))});
  }
  return records;
}

DistanceCurve aggregate_by_distance(std::span<const DistanceDimRecord> records) {
  if (records.empty()) throw std::invalid_argument("aggregate_by_distance: no records");
  std::vector<DistanceDimRecord> sorted(records.begin(), records.end());
  // Sorting values too fixes the summation order.
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.dominant_dim < b.dominant_dim;
  });
  DistanceCurve curve;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const std::int64_t distance = sorted[i].distance;
    if (distance < 0) throw std::invalid_argument("aggregate_by_distance: negative distance");
    double sum = 0.0;
    std::size_t count = 0;
    for (; i < sorted.size() && sorted[i].distance == distance; ++i, ++count) {
      sum += sorted[i].dominant_dim;
    }
    curve.push_back({distance, sum / static_cast<double>(count)});
  }
  return curve;
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share the average 1-based rank.
    const double rank = static_cast<double>(i + j) / 2.0 + 1.0;
    for (std::size_t p = i; p <= j; ++p) ranks[order[p]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman_correlation: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman_correlation: need at least 2 points");
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(x.begin(), x.end(), finite) || !std::all_of(y.begin(), y.end(), finite)) {
    throw std::invalid_argument("spearman_correlation: non-finite input");
  }
  const std::vector<double> rx = fractional_ranks(x);
  const std::vector<double> ry = fractional_ranks(y);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

HeadScore score_curve(HeadIndex head, const DistanceCurve& curve) {
  HeadScore score{head, std::nullopt, curve.size()};
  if (curve.size() < 2) return score;
  std::vector<double> x;
  std::vector<double> y;
  x.reserve(curve.size());
  y.reserve(curve.size());
  for (const CurvePoint& p : curve) {
    x.push_back(static_cast<double>(p.distance));
    y.push_back(p.mean_dominant_dim);
  }
  score.rho = spearman_correlation(x, y);
  return score;
}

void sort_scores(std::vector<HeadScore>& scores, RankBy rank_by) {
  std::stable_sort(scores.begin(), scores.end(), [&](const HeadScore& a, const HeadScore& b) {
    if (a.defined() != b.defined()) return a.defined();
    if (a.defined()) {
      const double ka = rank_key(a, rank_by);
      const double kb = rank_key(b, rank_by);
      if (ka != kb) return ka > kb;
    }
    return a.head < b.head;
  });
}

std::vector<HeadScore> score_heads(const std::map<HeadIndex, DistanceCurve>& curves,
                                   RankBy rank_by) {
  std::vector<HeadScore> scores;
  scores.reserve(curves.size());
  for (const auto& [head, curve] : curves) scores.push_back(score_curve(head, curve));
  sort_scores(scores, rank_by);
  return scores;
}

std::size_t mask_size(double fraction, std::size_t total) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("mask fraction must lie in [0, 1]");
  }
  if (fraction == 0.0 || total == 0) return 0;
  auto size = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 0.5));
  return std::clamp<std::size_t>(size, 1, total);
}

MaskSet select_mask(std::span<const HeadScore> scores, MaskStrategy strategy, double fraction,
                    std::uint64_t seed, RankBy rank_by) {
  const std::size_t size = mask_size(fraction, scores.size());
  MaskSet mask;
  mask.provenance = MaskProvenance{strategy, fraction, seed};
  std::vector<HeadScore> ranked(scores.begin(), scores.end());
  if (strategy == MaskStrategy::Top) {
    sort_scores(ranked, rank_by);
  } else {
    std::sort(ranked.begin(), ranked.end(),
              [](const HeadScore& a, const HeadScore& b) { return a.head < b.head; });
    Rng rng(seed);
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, ranked.size() - i));
      std::swap(ranked[i], ranked[j]);
    }
  }
  for (std::size_t i = 0; i < size; ++i) {
    if (!mask.entries.insert(ranked[i].head).second) {
      throw std::invalid_argument("select_mask: duplicate head " + to_string(ranked[i].head));
    }
  }
  return mask;
}

Heatmap dimension_heatmap(const std::map<HeadIndex, std::vector<ContributionVector>>& samples,
                          int n_layers, int n_heads, int top_k, HeatmapStatistic statistic) {
  if (n_layers < 1 || n_heads < 1) throw std::invalid_argument("dimension_heatmap: empty grid");
  Heatmap map;
  map.values = Eigen::MatrixXd::Constant(n_layers, n_heads, std::numeric_limits<double>::quiet_NaN());
  map.present = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n_layers, n_heads, false);
  for (const auto& [head, contributions] : samples) {
    if (head.layer < 0 || head.layer >= n_layers || head.head < 0 || head.head >= n_heads) {
      throw std::out_of_range("dimension_heatmap: head " + to_string(head) + " outside the grid");
    }
    if (contributions.empty()) continue;
    double total = 0.0;
    for (const ContributionVector& c : contributions) {
      if (statistic == HeatmapStatistic::MeanDominantDim) {
        total += dominant_dimension(c);
      } else {
        const std::vector<int> top = top_contributing_dims(c, top_k);
        total += static_cast<double>(std::accumulate(top.begin(), top.end(), 0LL)) /
                 static_cast<double>(top.size());
      }
    }
    map.values(head.layer, head.head) = total / static_cast<double>(contributions.size());
    map.present(head.layer, head.head) = true;
  }
  return map;
}

}  // namespace ropescope
