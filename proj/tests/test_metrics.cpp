#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gat/error.hpp"
#include "gat/metrics.hpp"
#include "metrics_oracle.hpp"

namespace gat {
namespace {

PredictionSet worked_example() {
  return {{1, {0.9, 0.8}, {0}}, {2, {0.7, 0.6}, {1}}};
}

TEST(Metrics, WorkedExample) {
  const PredictionSet p = worked_example();
  EXPECT_EQ(gap(p, 2), 0.75);
  const MeanAp m = mean_ap(p);
  EXPECT_EQ(m.per_class[0], 1.0);
  EXPECT_EQ(m.per_class[1], 0.5);
  EXPECT_EQ(m.map, 0.75);
  EXPECT_EQ(perr(p), 0.5);
  EXPECT_EQ(hit_at_1(p), 0.5);
  EXPECT_EQ(testing::oracle_gap(p, 2), 0.75);
}

TEST(Metrics, PerfectPredictions) {
  PredictionSet p = {{0, {0.9, 0.1, 0.8}, {0, 2}}, {1, {0.2, 0.95, 0.1}, {1}}, {2, {0.3, 0.2, 0.7}, {2}}};
  MetricsReport r = compute_metrics(p);
  EXPECT_EQ(r.gap, 1.0);
  EXPECT_EQ(r.map, 1.0);
  EXPECT_EQ(r.perr, 1.0);
  EXPECT_EQ(r.hit_at_1, 1.0);
}

TEST(Metrics, TopOneGapWithCorrectSingleLabels) {
  PredictionSet p = {{0, {0.2, 0.3, 0.1}, {1}}, {1, {0.9, 0.8, 0.85}, {0}}};
  EXPECT_EQ(gap(p, 1), 1.0);
}

TEST(Metrics, AllPositiveClassAndFullLabelSet) {
  PredictionSet p = {{0, {0.1, 0.5}, {0, 1}}, {1, {0.9, 0.2}, {0}}};
  EXPECT_EQ(mean_ap(p).per_class[0], 1.0);
  PredictionSet q = {{0, {0.3, 0.1, 0.2}, {0, 1, 2}}};
  EXPECT_EQ(perr(q), 1.0);
}

TEST(Metrics, ExcludesClassesWithoutPositives) {
  PredictionSet p = {{0, {0.9, 0.1, 0.5}, {0}}, {1, {0.2, 0.1, 0.7}, {2}}};
  const MeanAp m = mean_ap(p);
  EXPECT_TRUE(std::isnan(m.per_class[1]));
  EXPECT_EQ(m.map, 1.0);
}

TEST(Metrics, EqualScoresPickClassZero) {
  PredictionSet hit = {{0, {0.5, 0.5, 0.5}, {0}}};
  PredictionSet miss = {{0, {0.5, 0.5, 0.5}, {2}}};
  EXPECT_EQ(hit_at_1(hit), 1.0);
  EXPECT_EQ(hit_at_1(miss), 0.0);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(gap({}, 20), DataError);
  EXPECT_THROW(gap(worked_example(), 0), ConfigError);
  PredictionSet bad = {{0, {0.1, 0.2}, {2}}};
  EXPECT_THROW(perr(bad), DataError);
  PredictionSet ragged = {{0, {0.1, 0.2}, {0}}, {1, {0.1}, {0}}};
  EXPECT_THROW(hit_at_1(ragged), DataError);
  PredictionSet nan = {{0, {std::nan(""), 0.2}, {0}}};
  EXPECT_THROW(hit_at_1(nan), NumericError);
}

TEST(Metrics, MatchOracleExactly) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const PredictionSet p = testing::random_instance(rng);
    const std::size_t k = 1 + rng() % 12;
    EXPECT_EQ(gap(p, k), testing::oracle_gap(p, k)) << "trial " << trial;
    const MeanAp m = mean_ap(p);
    const auto expected = testing::oracle_class_ap(p);
    for (std::size_t c = 0; c < expected.size(); ++c) {
      if (expected[c] < 0) {
        EXPECT_TRUE(std::isnan(m.per_class[c]));
      } else {
        EXPECT_EQ(m.per_class[c], expected[c]);
      }
    }
    EXPECT_EQ(m.map, testing::oracle_map(p));
    EXPECT_EQ(perr(p), testing::oracle_perr(p));
    EXPECT_EQ(hit_at_1(p), testing::oracle_hit_at_1(p));
  }
}

TEST(Metrics, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const PredictionSet p = testing::random_instance(rng);
    PredictionSet q = p;
    for (auto& v : q)
      for (auto& s : v.scores) s = std::exp(3.0 * s) - 7.0;
    const MetricsReport a = compute_metrics(p), b = compute_metrics(q);
    EXPECT_EQ(a.gap, b.gap);
    EXPECT_EQ(a.map, b.map);
    EXPECT_EQ(a.perr, b.perr);
    EXPECT_EQ(a.hit_at_1, b.hit_at_1);
  }
}

TEST(Metrics, LargeKIsPooledFullAp) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const PredictionSet p = testing::random_instance(rng);
    const std::size_t classes = p.front().scores.size();
    EXPECT_EQ(gap(p, classes), gap(p, classes + 5));
    EXPECT_EQ(gap(p, classes), testing::oracle_gap(p, 1000));
  }
}

TEST(Metrics, AllValuesInUnitInterval) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const MetricsReport r = compute_metrics(testing::random_instance(rng));
    for (double v : {r.gap, r.map, r.perr, r.hit_at_1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, JsonRoundTrip) {
  PredictionSet p = {{0, {0.9, 0.1, 0.5}, {0}}, {1, {0.2, 0.1, 0.7}, {2}}};
  const MetricsReport r = compute_metrics(p, 3);
  const std::string text = to_json(r);
  EXPECT_NE(text.find("\"per_class_ap\""), std::string::npos);
  EXPECT_NE(text.find("null"), std::string::npos);
  const MetricsReport back = metrics_from_json(text);
  EXPECT_EQ(back.gap, r.gap);
  EXPECT_EQ(back.map, r.map);
  EXPECT_EQ(back.k, 3u);
  EXPECT_TRUE(std::isnan(back.per_class_ap[1]));
  EXPECT_EQ(to_json(back), text);
  EXPECT_THROW(metrics_from_json("{"), DataError);
}

}  // namespace
}  // namespace gat
