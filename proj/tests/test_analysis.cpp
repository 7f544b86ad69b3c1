#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "gat/analysis.hpp"
#include "gat/error.hpp"
#include "gat/ops.hpp"

namespace gat {
namespace {

Dataset tiny_data(std::uint64_t seed = 3, std::size_t count = 24) {
  GenSpec s;
  s.count = count;
  s.frames = 8;
  s.video_dim = 4;
  s.audio_dim = 4;
  s.classes = 4;
  s.seed = seed;
  return generate(s);
}

ModelConfig tiny_model(std::vector<std::size_t> experts = {kGlobalWindow, 4}) {
  ModelConfig m;
  m.frames = 8;
  m.video_dim = 4;
  m.audio_dim = 4;
  m.classes = 4;
  m.heads = 2;
  m.hidden = 8;
  m.experts = std::move(experts);
  return m;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gat_analysis_" + name);
}

TEST(Profile, ColumnMeansOfKnownMaps) {
  AttentionRecord r;
  r.mean_map = Tensor::matrix({{1.0, 0.0}, {0.5, 0.5}});
  r.windows = {kGlobalWindow, 1};
  // Two segments of one frame each; heads are averaged first.
  r.local_maps = {{}, {Tensor({2, 1, 1}, {1.0, 1.0}), Tensor({2, 1, 1}, {1.0, 1.0})}};
  const AttentionProfile p = attention_profile(r);
  ASSERT_EQ(p.global.size(), 2u);
  EXPECT_DOUBLE_EQ(p.global[0], 0.75);
  EXPECT_DOUBLE_EQ(p.global[1], 0.25);
  EXPECT_EQ(p.window, 1u);
  EXPECT_EQ(p.local, (std::vector<double>{1.0, 1.0}));
}

TEST(Profile, DegenerateMaps) {
  const std::size_t T = 5;
  AttentionRecord r;
  r.windows = {kGlobalWindow};
  r.local_maps = {{}};
  r.mean_map = Tensor::filled({T, T}, 1.0 / T);
  for (double v : attention_profile(r).global) EXPECT_DOUBLE_EQ(v, 1.0 / T);

  std::vector<double> eye(T * T, 0.0), focus(T * T, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    eye[i * T + i] = 1.0;
    focus[i * T + 2] = 1.0;
  }
  r.mean_map = Tensor({T, T}, eye);
  for (double v : attention_profile(r).global) EXPECT_DOUBLE_EQ(v, 1.0 / T);
  r.mean_map = Tensor({T, T}, focus);
  EXPECT_EQ(attention_profile(r).global, (std::vector<double>{0, 0, 1, 0, 0}));
  EXPECT_TRUE(attention_profile(r).local.empty());
}

TEST(Profile, GlobalSumsToOneAndSegmentsAverageOneOverWindow) {
  const Dataset d = tiny_data();
  const GatParams params = GatParams::init(tiny_model(), 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const ExampleAttention att = example_attention(params, d.examples[i], 0.5);
    for (const AttentionProfile* p : {&att.video, &att.audio, &att.adv_video, &att.adv_audio}) {
      ASSERT_EQ(p->global.size(), 8u);
      EXPECT_NEAR(std::accumulate(p->global.begin(), p->global.end(), 0.0), 1.0, 1e-12);
      ASSERT_EQ(p->local.size(), 8u);
      EXPECT_EQ(p->window, 4u);
      for (std::size_t s = 0; s < 2; ++s) {
        EXPECT_NEAR(std::accumulate(p->local.begin() + 4 * s, p->local.begin() + 4 * (s + 1), 0.0), 1.0, 1e-12);
      }
    }
  }
}

TEST(Profile, SingleExpertHasNoLocalProfile) {
  const Dataset d = tiny_data();
  const GatParams params = GatParams::init(tiny_model({kGlobalWindow}), 2);
  const ExampleAttention att = example_attention(params, d.examples[0], 0.5);
  EXPECT_TRUE(att.video.local.empty());
  EXPECT_EQ(att.video.global.size(), 8u);
}

TEST(Profile, ZeroEpsilonLeavesAttentionUnchanged) {
  const Dataset d = tiny_data();
  const GatParams params = GatParams::init(tiny_model(), 5);
  const ExampleAttention att = example_attention(params, d.examples[1], 0.0);
  EXPECT_EQ(att.video.global, att.adv_video.global);
  EXPECT_EQ(att.audio.local, att.adv_audio.local);
}

TEST(Attack, ZeroEpsilonIsBitIdenticalToCleanEvaluation) {
  const Dataset d = tiny_data(4, 30);
  for (std::uint64_t seed : {1, 2}) {
    const GatParams params = GatParams::init(tiny_model(), seed);
    const MetricsReport clean = evaluate(params, d, 20);
    const MetricsReport adv = attack_eval(params, d, 0.0, 20);
    EXPECT_EQ(to_json(clean), to_json(adv));
  }
}

TEST(Attack, PerturbationRaisesLossOnTheAttackedModel) {
  // Attack metrics cannot be checked against an oracle, but the underlying
  // BCE on the attacked inputs must not fall below the clean one for small eps.
  const Dataset d = tiny_data(5, 16);
  const GatParams params = GatParams::init(tiny_model(), 9);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Batch b = make_batch(d, idx);
  AdversarialInputs adv;
  {
    Tape tape;
    TapeScope scope(tape);
    adv = adv_examples(b, params, 1e-3);
  }
  NoGradScope ng;
  const double clean = bce_loss(forward_batch(params, b.video, b.audio).logits, b.targets).item();
  const double attacked = bce_loss(forward_batch(params, adv.video, adv.audio).logits, b.targets).item();
  EXPECT_GT(attacked, clean);
  EXPECT_NO_THROW(attack_eval(params, d, 0.5));
}

TEST(Attack, RejectsBadInputs) {
  const Dataset d = tiny_data();
  const GatParams params = GatParams::init(tiny_model(), 1);
  EXPECT_THROW(attack_eval(params, d, -0.1), ConfigError);
  Dataset empty = d;
  empty.examples.clear();
  EXPECT_THROW(attack_eval(params, empty, 0.1), DataError);
  Dataset wrong = d;
  wrong.classes = 5;
  EXPECT_THROW(attack_eval(params, wrong, 0.1), CheckpointError);
}

TEST(Drift, ZeroAtZeroEpsilonAndPositiveOtherwise) {
  const Dataset d = tiny_data();
  const GatParams params = GatParams::init(tiny_model(), 3);
  const DriftReport zero = drift_norm(params, d, 0.0);
  EXPECT_EQ(zero.total, 0.0);
  const DriftReport r = drift_norm(params, d, 0.5);
  EXPECT_GT(r.video, 0.0);
  EXPECT_GT(r.audio, 0.0);
  EXPECT_DOUBLE_EQ(r.total, r.video + r.audio);
}

TEST(Drift, MatchesFrobeniusRegularizerOnTheWholeSet) {
  const Dataset d = tiny_data(6, 10);
  const GatParams params = GatParams::init(tiny_model(), 4);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Batch b = make_batch(d, idx);
  double reference = 0.0;
  {
    Tape tape;
    TapeScope scope(tape);
    const AdversarialInputs adv = adv_examples(b, params, 0.7);
    const BatchOutput adv_out = forward_batch(params, adv.video, adv.audio);
    reference = frobenius_reg(collect_maps(adv.clean, false), collect_maps(adv_out, false)).item();
  }
  // Batch size changes only the scale of the input gradient, not its direction.
  EXPECT_NEAR(drift_norm(params, d, 0.7, 3).total, reference, 1e-10);
  EXPECT_NEAR(drift_norm(params, d, 0.7, 64).total, reference, 1e-10);
}

MetricsReport report_with(std::vector<double> ap) {
  MetricsReport r;
  r.per_class_ap = std::move(ap);
  double s = 0.0;
  std::size_t n = 0;
  for (double v : r.per_class_ap) {
    if (!std::isnan(v)) {
      s += v;
      ++n;
    }
  }
  r.map = s / static_cast<double>(n);
  return r;
}

TEST(ClassDelta, SortedTopBottomAndSum) {
  const MetricsReport a = report_with({0.9, 0.5, 0.4, 0.7});
  const MetricsReport b = report_with({0.6, 0.6, 0.4, 0.2});
  const ClassApDelta d = class_ap_delta(a, b);
  ASSERT_EQ(d.sorted.size(), 4u);
  EXPECT_EQ(d.sorted[0].cls, 3u);
  EXPECT_EQ(d.sorted[1].cls, 0u);
  EXPECT_EQ(d.sorted[2].cls, 2u);
  EXPECT_EQ(d.sorted[3].cls, 1u);
  EXPECT_EQ(d.top(2).size(), 2u);
  EXPECT_EQ(d.top(2)[0].cls, 3u);
  EXPECT_EQ(d.bottom(1)[0].cls, 1u);
  EXPECT_EQ(d.top(10).size(), 4u);
  EXPECT_NEAR(d.sum(), 4.0 * (a.map - b.map), 1e-12);
}

TEST(ClassDelta, SumMatchesMapDifferenceOnRandomReports) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(13), y(13);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const MetricsReport a = report_with(x), b = report_with(y);
    const ClassApDelta d = class_ap_delta(a, b);
    EXPECT_NEAR(d.sum(), 13.0 * (a.map - b.map), 1e-12);
    for (std::size_t i = 1; i < d.sorted.size(); ++i) EXPECT_GE(d.sorted[i - 1].delta, d.sorted[i].delta);
  }
}

TEST(ClassDelta, SkipsExcludedClassesAndRejectsMismatch) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const ClassApDelta d = class_ap_delta(report_with({0.5, nan, 0.3}), report_with({0.1, 0.2, nan}));
  ASSERT_EQ(d.sorted.size(), 1u);
  EXPECT_EQ(d.sorted[0].cls, 0u);
  EXPECT_THROW(class_ap_delta(report_with({0.5, 0.1}), report_with({0.5})), DataError);
}

PredictionSet random_preds(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PredictionSet out;
  for (std::size_t i = 0; i < n; ++i) {
    VideoPrediction p;
    p.id = i;
    for (std::size_t c = 0; c < k; ++c) p.scores.push_back(u(rng));
    p.labels = {i % k};
    out.push_back(std::move(p));
  }
  return out;
}

TEST(Partitions, OnePartitionEqualsFullMetrics) {
  std::mt19937_64 rng(2);
  const PredictionSet preds = random_preds(rng, 40, 5);
  const PartitionSummary s = partitioned_metrics(preds, 1, 20);
  const MetricsReport full = compute_metrics(preds, 20);
  EXPECT_EQ(s.mean.gap, full.gap);
  EXPECT_EQ(s.mean.map, full.map);
  EXPECT_EQ(s.sd.gap, 0.0);
}

TEST(Partitions, MeanAndSampleDeviationOverContiguousParts) {
  std::mt19937_64 rng(3);
  const PredictionSet preds = random_preds(rng, 53, 5);
  const PartitionSummary s = partitioned_metrics(preds, 5, 3);
  ASSERT_EQ(s.parts.size(), 5u);
  std::vector<double> gaps;
  std::size_t covered = 0;
  for (std::size_t p = 0; p < 5; ++p) {
    const std::size_t lo = p * 53 / 5, hi = (p + 1) * 53 / 5;
    covered += hi - lo;
    const MetricsReport ref = compute_metrics(PredictionSet(preds.begin() + lo, preds.begin() + hi), 3);
    EXPECT_EQ(s.parts[p].gap, ref.gap);
    gaps.push_back(ref.gap);
  }
  EXPECT_EQ(covered, 53u);
  const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / 5.0;
  double ss = 0.0;
  for (double g : gaps) ss += (g - mean) * (g - mean);
  EXPECT_NEAR(s.mean.gap, mean, 1e-15);
  EXPECT_NEAR(s.sd.gap, std::sqrt(ss / 4.0), 1e-15);
  EXPECT_THROW(partitioned_metrics(preds, 0, 3), ConfigError);
  EXPECT_THROW(partitioned_metrics(preds, 54, 3), ConfigError);
}

TEST(Sweep, ParamsAndValues) {
  EXPECT_EQ(parse_sweep_param("window"), SweepParam::kWindow);
  EXPECT_THROW(parse_sweep_param("beta"), ConfigError);
  Experiment base;
  base.model = tiny_model();
  EXPECT_EQ(with_value(base, SweepParam::kWindow, 2).model.experts, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(with_value(base, SweepParam::kWindow, 0).model.experts, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(with_value(base, SweepParam::kEpsilon, 0.25).train.adv.epsilon, 0.25);
  EXPECT_EQ(with_value(base, SweepParam::kAlpha, 3).train.adv.alpha, 3.0);
  EXPECT_THROW(with_value(base, SweepParam::kWindow, 1.5), ConfigError);
}

TEST(Sweep, SortedGridRecordsFailuresAndSharesSeeds) {
  const Dataset train_set = tiny_data(7, 32), val_set = tiny_data(8, 16);
  Experiment base;
  base.model = tiny_model();
  base.train.epochs = 1;
  base.train.batch_size = 16;
  base.train.lr = 1e-2;
  base.train.seed = 3;
  base.train.mode = TrainMode::kGatFr;
  const SweepResult r = sweep(SweepParam::kWindow, {4, 2.5, 2, 4}, base, train_set, val_set);
  ASSERT_EQ(r.points.size(), 4u);
  EXPECT_EQ(r.points[0].value, 2.0);
  EXPECT_EQ(r.points[1].value, 2.5);
  EXPECT_FALSE(r.points[1].error.empty());
  EXPECT_TRUE(r.points[0].error.empty());
  EXPECT_TRUE(r.points[2].error.empty());
  EXPECT_EQ(r.points[2].val_gap, r.points[3].val_gap);
  EXPECT_EQ(r.points[2].drift, r.points[3].drift);
  EXPECT_GT(r.points[0].drift, 0.0);

  const auto path = temp_path("sweep.csv");
  write_sweep_csv(r, path);
  const auto lines = read_lines(path);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "param,param_value,val_gap,drift,error");
  EXPECT_EQ(lines[1].rfind("window,2,", 0), 0u);
  std::filesystem::remove(path);
}

TEST(Sweep, SinglePointEqualsPlainTrainingAndJobsDoNotMatter) {
  const Dataset train_set = tiny_data(9, 32), val_set = tiny_data(10, 16);
  Experiment base;
  base.model = tiny_model();
  base.train.epochs = 2;
  base.train.batch_size = 16;
  base.train.lr = 1e-2;
  base.train.seed = 5;
  base.train.mode = TrainMode::kGatJs;
  const SweepResult one = sweep(SweepParam::kAlpha, {0.5}, base, train_set, val_set);
  const Experiment e = with_value(base, SweepParam::kAlpha, 0.5);
  const TrainResult r = train(train_set, val_set, e.model, e.train);
  ASSERT_EQ(one.points.size(), 1u);
  EXPECT_EQ(one.points[0].val_gap, r.best_val_gap);
  EXPECT_EQ(one.points[0].drift, drift_norm(r.best, val_set, e.attack_epsilon).total);

  const std::vector<double> grid{2, 0, 1, 0.5};
  const SweepResult serial = sweep(SweepParam::kAlpha, grid, base, train_set, val_set, 1);
  const SweepResult parallel = sweep(SweepParam::kAlpha, grid, base, train_set, val_set, 3);
  ASSERT_EQ(serial.points.size(), parallel.points.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_EQ(serial.points[i].value, parallel.points[i].value);
    EXPECT_EQ(serial.points[i].val_gap, parallel.points[i].val_gap);
    EXPECT_EQ(serial.points[i].drift, parallel.points[i].drift);
  }
  EXPECT_THROW(sweep(SweepParam::kAlpha, {}, base, train_set, val_set), ConfigError);
}

TEST(Csv, ProfileHasOneRowPerFrame) {
  const Dataset d = tiny_data();
  const GatParams params = GatParams::init(tiny_model(), 2);
  const ExampleAttention att = example_attention(params, d.examples[0], 0.5);
  const auto path = temp_path("profile.csv");
  write_profile_csv(att, false, path);
  const auto lines = read_lines(path);
  ASSERT_EQ(lines.size(), 9u);
  EXPECT_EQ(lines[0], "frame_index,global_weight,local_weight,adv_global_weight,adv_local_weight");
  std::istringstream row(lines[3]);
  std::string cell;
  std::vector<std::string> cells;
  while (std::getline(row, cell, ',')) cells.push_back(cell);
  ASSERT_EQ(cells.size(), 5u);
  EXPECT_EQ(cells[0], "2");
  EXPECT_EQ(std::stod(cells[1]), att.video.global[2]);
  EXPECT_EQ(std::stod(cells[4]), att.adv_video.local[2]);
  std::filesystem::remove(path);
}

TEST(Csv, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

}  // namespace
}  // namespace gat
