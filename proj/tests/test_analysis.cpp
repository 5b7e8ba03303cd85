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

#include <map>
#include <set>

#include "oracle.hpp"
#include "ropescope/analysis.hpp"
#include "ropescope/errors.hpp"
#include "ropescope/random.hpp"
#include "ropescope/synthetic.hpp"

using namespace ropescope;

namespace {

std::vector<double> random_ints(Rng& rng, std::size_t n, std::uint64_t range) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(uniform_below(rng, range));
  return v;
}

HeadTrace random_head(Rng& rng, Eigen::Index t, Eigen::Index d) {
  HeadTrace head;
  head.queries.resize(t, d);
  head.keys.resize(t, d);
  for (Eigen::Index i = 0; i < head.queries.size(); ++i) {
    head.queries.data()[i] = standard_normal(rng);
    head.keys.data()[i] = standard_normal(rng);
  }
  return head;
}

}  // namespace

TEST_CASE("random pair sampling") {
  const auto tiny = sample_random_pairs(2, 1, 99);
  REQUIRE(tiny.size() == 2);
  for (const TokenPair& p : tiny) {
    CHECK(p.key_pos <= p.query_pos);
    CHECK(p.query_pos <= 1);
    CHECK(p.key_pos >= 0);
  }

  const auto a = sample_random_pairs(1000, 100, 5);
  const auto b = sample_random_pairs(1000, 100, 5);
  CHECK(a.size() == 100000);
  CHECK(a == b);
  CHECK(a != sample_random_pairs(1000, 100, 6));
  for (const TokenPair& p : a) {
    CHECK(p.key_pos >= 0);
    CHECK(p.key_pos <= p.query_pos);
    CHECK(p.query_pos < 1000);
  }

  CHECK_THROWS_AS(sample_random_pairs(1, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(sample_random_pairs(10, 0, 0), std::invalid_argument);
}

TEST_CASE("random pairs are uniform over the causal triangle") {
  // T = 4 has 10 cells; 100000 draws, chi-square with 9 degrees of freedom.
  const auto pairs = sample_random_pairs(4, 25000, 123);
  std::map<std::pair<std::int64_t, std::int64_t>, int> counts;
  for (const TokenPair& p : pairs) ++counts[{p.query_pos, p.key_pos}];
  CHECK(counts.size() == 10);
  double chi2 = 0.0;
  for (const auto& [cell, count] : counts) {
    const double expected = 10000.0;
    chi2 += (count - expected) * (count - expected) / expected;
  }
  // 0.99 quantile of chi-square(9).
  CHECK(chi2 < 21.665994333461924);
}

TEST_CASE("top attention pairs") {
  Matrix<double> scores = Matrix<double>::Zero(3, 3);
  scores.row(0) << 1.0, 0.0, 0.0;
  scores.row(1) << 0.4, 0.6, 0.0;
  scores.row(2) << 0.2, 0.7, 0.1;
  const auto top1 = sample_top_attention_pairs(scores, 1, {2, 3});
  REQUIRE(top1.size() == 3);
  CHECK(top1[2].pair == TokenPair{2, 1});
  CHECK(top1[2].attention_score == 0.7);
  CHECK(top1[2].head == HeadIndex{2, 3});

  const auto all = sample_top_attention_pairs(scores, 10);
  CHECK(all.size() == 6);
  for (const auto& s : all) CHECK(s.pair.key_pos <= s.pair.query_pos);

  Matrix<double> uniform = Matrix<double>::Constant(6, 6, 1.0 / 6.0);
  const auto tied = sample_top_attention_pairs(uniform, 2);
  std::vector<std::int64_t> row5;
  for (const auto& s : tied) {
    if (s.pair.query_pos == 5) row5.push_back(s.pair.key_pos);
  }
  CHECK(row5 == std::vector<std::int64_t>{0, 1});

  // Values above the diagonal never win.
  Matrix<double> leaky = Matrix<double>::Zero(2, 2);
  leaky(0, 1) = 100.0;
  const auto first = sample_top_attention_pairs(leaky, 1);
  CHECK(first[0].pair == TokenPair{0, 0});

  CHECK_THROWS_AS(sample_top_attention_pairs(Matrix<double>(), 1), std::invalid_argument);
  CHECK(sample_top_attention_pairs(scores, 2) == sample_top_attention_pairs(scores, 2));
}

TEST_CASE("aggregate by distance") {
  const std::vector<DistanceDimRecord> records{{5, 10}, {5, 20}, {7, 4}};
  const DistanceCurve curve = aggregate_by_distance(records);
  CHECK(curve == DistanceCurve{{5, 15}, {7, 4}});
  const std::vector<DistanceDimRecord> one{{3, 2.5}};
  CHECK(aggregate_by_distance(one) == DistanceCurve{{3, 2.5}});
  CHECK_THROWS_AS(aggregate_by_distance(std::vector<DistanceDimRecord>{}), std::invalid_argument);
}

TEST_CASE("aggregate by distance matches a two-pass mean and ignores order") {
  Rng rng(21);
  std::vector<DistanceDimRecord> records(100000);
  for (auto& r : records) {
    r.distance = static_cast<std::int64_t>(uniform_below(rng, 500));
    r.dominant_dim = 63.0 * uniform01(rng);
  }
  const DistanceCurve curve = aggregate_by_distance(records);

  std::map<std::int64_t, std::vector<double>> groups;
  for (const auto& r : records) groups[r.distance].push_back(r.dominant_dim);
  REQUIRE(curve.size() == groups.size());
  std::size_t i = 0;
  for (const auto& [distance, values] : groups) {
    double mean = 0.0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double correction = 0.0;
    for (const double v : values) correction += v - mean;
    mean += correction / static_cast<double>(values.size());
    CHECK(curve[i].distance == distance);
    CHECK(std::abs(curve[i].mean_dominant_dim - mean) <= 1e-12 * std::max(1.0, mean));
    if (i > 0) CHECK(curve[i].distance > curve[i - 1].distance);
    ++i;
  }

  std::vector<DistanceDimRecord> shuffled = records;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(aggregate_by_distance(shuffled) == curve);
}

TEST_CASE("spearman correlation") {
  const std::vector<double> x{1, 2, 3};
  CHECK(*spearman_correlation(x, std::vector<double>{3, 1, 2}) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(*spearman_correlation(x, std::vector<double>{10, 20, 300}) == doctest::Approx(1.0));
  CHECK(*spearman_correlation(x, std::vector<double>{5, 4, -1}) == doctest::Approx(-1.0));
  CHECK_FALSE(spearman_correlation(x, std::vector<double>{2, 2, 2}).has_value());
  CHECK_FALSE(spearman_correlation(std::vector<double>{4, 4}, std::vector<double>{1, 2}).has_value());
  CHECK_THROWS_AS(spearman_correlation(x, std::vector<double>{1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(spearman_correlation(std::vector<double>{1}, std::vector<double>{1}),
                  std::invalid_argument);

  CHECK(fractional_ranks(std::vector<double>{10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
}

TEST_CASE("spearman agrees with a brute-force oracle on tied vectors") {
  Rng rng(31);
  int undefined = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform_below(rng, 5));
    const std::vector<double> x = random_ints(rng, n, 4);
    const std::vector<double> y = random_ints(rng, n, 4);
    const auto rho = spearman_correlation(x, y);
    if (oracle::constant(x) || oracle::constant(y)) {
      CHECK_FALSE(rho.has_value());
      ++undefined;
      continue;
    }
    REQUIRE(rho.has_value());
    CHECK(std::abs(*rho - oracle::spearman(x, y)) <= 1e-12);
    CHECK(*spearman_correlation(y, x) == doctest::Approx(*rho).epsilon(1e-15));
  }
  CHECK(undefined > 0);
}

TEST_CASE("spearman is invariant under increasing transforms") {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(50);
    std::vector<double> y(50);
    for (std::size_t i = 0; i < 50; ++i) {
      x[i] = 5.0 * standard_normal(rng);
      y[i] = x[i] + 3.0 * standard_normal(rng);
    }
    std::vector<double> ex(50);
    for (std::size_t i = 0; i < 50; ++i) ex[i] = std::exp(x[i]) / 10.0;
    CHECK(std::abs(*spearman_correlation(x, y) - *spearman_correlation(ex, y)) <= 1e-12);
  }
}

TEST_CASE("score heads ranks defined heads first") {
  std::map<HeadIndex, DistanceCurve> curves;
  curves[{0, 0}] = {{1, 1}, {2, 2}, {3, 3}};
  curves[{0, 1}] = {{1, 3}, {2, 2}, {3, 1}};
  curves[{1, 0}] = {{1, 1}};
  curves[{1, 1}] = {{1, 1}, {2, 2}, {3, 3}};
  curves[{2, 0}] = {{1, 5}, {2, 5}};
  const auto scores = score_heads(curves);
  REQUIRE(scores.size() == 5);
  CHECK(scores[0].head == HeadIndex{0, 0});
  CHECK(scores[1].head == HeadIndex{1, 1});
  CHECK(*scores[0].rho == *scores[1].rho);
  CHECK(scores[2].head == HeadIndex{0, 1});
  CHECK_FALSE(scores[3].defined());
  CHECK_FALSE(scores[4].defined());
  CHECK(scores[3].head == HeadIndex{1, 0});
  CHECK(scores[3].n_points == 1);
  CHECK(scores[4].n_points == 2);

  const auto by_abs = score_heads(curves, RankBy::AbsoluteRho);
  CHECK(by_abs[0].head == HeadIndex{0, 0});
  CHECK(by_abs[1].head == HeadIndex{0, 1});
  CHECK(by_abs[2].head == HeadIndex{1, 1});
}

TEST_CASE("mask selection") {
  CHECK(mask_size(0.05, 1024) == 51);
  CHECK(mask_size(0.0, 1024) == 0);
  CHECK(mask_size(0.001, 10) == 1);
  CHECK(mask_size(0.25, 10) == 3);
  CHECK(mask_size(1.0, 7) == 7);
  CHECK_THROWS_AS(mask_size(1.5, 10), std::invalid_argument);
  CHECK_THROWS_AS(mask_size(-0.1, 10), std::invalid_argument);

  Rng rng(41);
  std::vector<HeadScore> scores;
  for (int l = 0; l < 32; ++l) {
    for (int h = 0; h < 32; ++h) scores.push_back({{l, h}, uniform01(rng) * 2 - 1, 10});
  }
  const MaskSet top = select_mask(scores, MaskStrategy::Top, 0.05, 0);
  CHECK(top.size() == 51);
  std::vector<double> sorted;
  for (const auto& s : scores) sorted.push_back(*s.rho);
  std::sort(sorted.rbegin(), sorted.rend());
  for (const auto& s : scores) CHECK(top.contains(s.head) == (*s.rho >= sorted[50]));
  CHECK(top.provenance->strategy == MaskStrategy::Top);

  CHECK(select_mask(scores, MaskStrategy::Top, 0.0, 0).empty());

  const MaskSet r1 = select_mask(scores, MaskStrategy::Random, 0.1, 77);
  const MaskSet r2 = select_mask(scores, MaskStrategy::Random, 0.1, 77);
  CHECK(r1.entries == r2.entries);
  CHECK(r1.size() == 102);
  CHECK(select_mask(scores, MaskStrategy::Random, 0.1, 78).entries != r1.entries);

  std::vector<HeadScore> shuffled = scores;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(select_mask(shuffled, MaskStrategy::Random, 0.1, 77).entries == r1.entries);

  CHECK_THROWS_AS(select_mask(scores, MaskStrategy::Top, 2.0, 0), std::invalid_argument);
}

TEST_CASE("top masks nest") {
  Rng rng(42);
  std::vector<HeadScore> scores;
  for (int h = 0; h < 40; ++h) {
    scores.push_back({{0, h}, static_cast<double>(uniform_below(rng, 5)) / 4.0, 4});
  }
  scores.push_back({{1, 0}, std::nullopt, 1});
  for (double f1 = 0.0; f1 <= 1.0; f1 += 0.05) {
    for (double f2 = f1; f2 <= 1.0; f2 += 0.1) {
      const auto a = select_mask(scores, MaskStrategy::Top, f1, 0).entries;
      const auto b = select_mask(scores, MaskStrategy::Top, f2, 0).entries;
      CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
    }
  }
}

TEST_CASE("dimension heatmap") {
  ContributionVector fixed;
  fixed.g = Eigen::VectorXd::Zero(64);
  for (int i = 59; i < 64; ++i) fixed.g[i] = 10.0 + i;
  std::map<HeadIndex, std::vector<ContributionVector>> samples;
  samples[{0, 1}] = {fixed, fixed, fixed};
  ContributionVector single;
  single.g = Eigen::VectorXd::Zero(64);
  single.g[12] = 1.0;
  samples[{1, 0}] = {single};
  const Heatmap map = dimension_heatmap(samples, 2, 2, 5);
  CHECK(map.values(0, 1) == doctest::Approx(61.0));
  CHECK(dimension_heatmap(samples, 2, 2, 1).values(1, 0) == 12.0);
  CHECK(map.has({0, 1}));
  CHECK_FALSE(map.has({0, 0}));
  CHECK(std::isnan(map.values(0, 0)));
  CHECK_THROWS_AS(dimension_heatmap(samples, 1, 1, 5), std::out_of_range);
}

TEST_CASE("dimension heatmap matches brute-force recomputation") {
  Rng rng(43);
  std::map<HeadIndex, std::vector<ContributionVector>> samples;
  std::map<HeadIndex, double> expected;
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 2; ++h) {
      const HeadTrace head = random_head(rng, 20, 16);
      double total = 0.0;
      const auto pairs = sample_random_pairs(20, 3, derive_seed(1, l, h));
      for (const TokenPair& p : pairs) {
        const ContributionVector c = trace_contributions(head, p);
        samples[{l, h}].push_back(c);
        std::vector<std::pair<double, int>> ranked;
        for (int i = 0; i < 8; ++i) {
          const double gi = head.queries(p.query_pos, 2 * i) * head.keys(p.key_pos, 2 * i) +
                            head.queries(p.query_pos, 2 * i + 1) * head.keys(p.key_pos, 2 * i + 1);
          ranked.push_back({-gi, i});
        }
        std::sort(ranked.begin(), ranked.end());
        double mean = 0.0;
        for (int i = 0; i < 5; ++i) mean += ranked[static_cast<std::size_t>(i)].second;
        total += mean / 5.0;
      }
      expected[{l, h}] = total / static_cast<double>(pairs.size());
    }
  }
  const Heatmap map = dimension_heatmap(samples, 2, 2, 5);
  for (const auto& [head, value] : expected) {
    CHECK(map.values(head.layer, head.head) == doctest::Approx(value).epsilon(1e-12));
  }
  const Heatmap dominant = dimension_heatmap(samples, 2, 2, 5, HeatmapStatistic::MeanDominantDim);
  CHECK(dominant.present.all());
}

TEST_CASE("trace contributions use the stored rotated vectors") {
  Rng rng(44);
  const HeadTrace head = random_head(rng, 8, 8);
  const ContributionVector c = trace_contributions(head, {5, 2});
  CHECK(c.query_pos == 5);
  CHECK(c.key_pos == 2);
  CHECK(c.total() == doctest::Approx(head.queries.row(5).dot(head.keys.row(2))).epsilon(1e-14));
  CHECK_THROWS_AS(trace_contributions(head, {2, 5}), std::out_of_range);
  CHECK_THROWS_AS(trace_contributions(head, {8, 0}), std::out_of_range);
}

TEST_CASE("synthetic planted heads are detected") {
  SyntheticTraceSpec spec;
  spec.seq_len = 512;
  spec.seed = 3;
  const SyntheticTrace synth = make_synthetic_trace(spec);
  CHECK(synth.trace.n_layers == 1);
  CHECK(synth.trace.n_heads == 8);
  CHECK(synth.planted.size() == 4);
  synth.trace.validate(1e-9);

  std::map<HeadIndex, DistanceCurve> curves;
  for (const HeadIndex h : synth.trace.head_indices()) {
    const HeadTrace& head = synth.trace.at(h);
    const auto pairs = sample_top_attention_pairs(head.probs, 100, h);
    curves[h] = aggregate_by_distance(dominant_records(head, pairs));
  }
  const auto scores = score_heads(curves);
  for (const HeadScore& s : scores) {
    REQUIRE(s.defined());
    if (synth.planted.count(s.head)) {
      CHECK(*s.rho >= 0.8);
    } else {
      CHECK(std::abs(*s.rho) <= 0.3);
    }
  }
  CHECK(select_mask(scores, MaskStrategy::Top, 0.5, 0).entries == synth.planted);
}

TEST_CASE("synthetic traces are deterministic and validated") {
  SyntheticTraceSpec spec;
  spec.seq_len = 64;
  spec.head_dim = 16;
  const SyntheticTrace a = make_synthetic_trace(spec);
  const SyntheticTrace b = make_synthetic_trace(spec);
  CHECK(a.planted == b.planted);
  CHECK(a.trace.at({0, 3}).probs == b.trace.at({0, 3}).probs);
  spec.seed = 1;
  const SyntheticTrace c = make_synthetic_trace(spec);
  CHECK(c.trace.at({0, 0}).queries != a.trace.at({0, 0}).queries);

  SyntheticTraceSpec bad = spec;
  bad.head_dim = 7;
  CHECK_THROWS(make_synthetic_trace(bad));
  bad = spec;
  bad.seq_len = 1;
  CHECK_THROWS(make_synthetic_trace(bad));
}

TEST_CASE("causal softmax and trace validation") {
  Matrix<double> logits(3, 3);
  logits << 1, 9, 9, 2, 2, 9, 0, 1, 2;
  const Matrix<double> p = causal_softmax(logits);
  CHECK(p(0, 0) == 1.0);
  CHECK(p(0, 1) == 0.0);
  CHECK(p(1, 0) == doctest::Approx(0.5));
  CHECK(p.row(2).sum() == doctest::Approx(1.0).epsilon(1e-15));

  ActivationTrace trace(1, 1, 4, 3);
  HeadTrace& head = trace.at({0, 0});
  head.queries = Matrix<double>::Zero(3, 4);
  head.keys = Matrix<double>::Zero(3, 4);
  head.probs = p;
  trace.validate();
  head.probs(2, 2) += 0.1;
  CHECK_THROWS_AS(trace.validate(), InvariantError);
  head.probs = p;
  head.keys = Matrix<double>::Zero(3, 6);
  CHECK_THROWS_AS(trace.validate(), ShapeMismatchError);
  CHECK(to_string(HeadIndex{3, 14}) == "L3.H14");
}
