#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gat/attention.hpp"
#include "gat/data.hpp"
#include "gat/metrics.hpp"
#include "gat/model.hpp"
#include "gat/trainer.hpp"

namespace gat {

struct AttentionProfile {
  std::vector<double> global;  // column means of the head-averaged global map
  /// Per-segment column means of the head-averaged local maps, concatenated;
  /// empty when the record has no local expert.
  std::vector<double> local;
  std::size_t window = 0;  // window of the local expert used
};

/// Uses the first local expert of the record for the local profile.
AttentionProfile attention_profile(const AttentionRecord& record);

/// Clean and FGSM-perturbed attention of one example, first encoder layer.
struct ExampleAttention {
  AttentionProfile video, audio;
  AttentionProfile adv_video, adv_audio;
};

ExampleAttention example_attention(const GatParams& params, const Example& example, double epsilon);

/// Metrics on FGSM examples built against `params` itself, batch by batch.
MetricsReport attack_eval(const GatParams& params, const Dataset& data, double epsilon,
                          std::size_t k = kDefaultGapTopK, std::size_t batch_size = 64);

struct DriftReport {
  double video = 0.0;
  double audio = 0.0;
  double total = 0.0;
};

/// Mean over examples of |A - A_adv| (Frobenius, global head-averaged map,
/// summed over layers), per modality and summed.
DriftReport drift_norm(const GatParams& params, const Dataset& data, double epsilon,
                       std::size_t batch_size = 64);

struct ClassDelta {
  std::size_t cls = 0;
  double delta = 0.0;  // AP(a) - AP(b)
};

struct ClassApDelta {
  std::vector<ClassDelta> sorted;  // descending by delta, ties by class id

  std::vector<ClassDelta> top(std::size_t n) const;
  std::vector<ClassDelta> bottom(std::size_t n) const;
  double sum() const;
};

/// Classes without positives in either report are skipped.
ClassApDelta class_ap_delta(const MetricsReport& a, const MetricsReport& b);

struct PartitionSummary {
  std::vector<MetricsReport> parts;
  MetricsReport mean;
  MetricsReport sd;  // sample standard deviation; per_class_ap left empty
};

/// Metrics on `n` contiguous, non-overlapping partitions of the predictions.
PartitionSummary partitioned_metrics(const PredictionSet& preds, std::size_t n, std::size_t k);

/// Everything a full train-and-measure run needs.
struct Experiment {
  ModelConfig model;
  TrainConfig train;
  double attack_epsilon = 0.5;  // FGSM radius for drift and attack measurements
};

enum class SweepParam { kEpsilon, kAlpha, kWindow };

std::string to_string(SweepParam p);
SweepParam parse_sweep_param(const std::string& name);

/// Returns `base` with the swept value applied. kWindow sets the expert list
/// to {global, value}; value 0 gives two global experts.
Experiment with_value(Experiment base, SweepParam param, double value);

struct SweepPoint {
  double value = 0.0;
  double val_gap = 0.0;
  double drift = 0.0;
  std::string error;  // non-empty when this point failed
};

struct SweepResult {
  SweepParam param = SweepParam::kEpsilon;
  std::vector<SweepPoint> points;  // sorted by value
};

/// Trains and validates once per grid value with shared seeds. Failures are
/// recorded on their point and do not stop the sweep. Up to `jobs` points
/// train concurrently; the result does not depend on `jobs`.
SweepResult sweep(SweepParam param, std::vector<double> grid, const Experiment& base, const Dataset& train_set,
                  const Dataset& val_set, std::size_t jobs = 1);

void write_profile_csv(const ExampleAttention& att, bool audio, const std::filesystem::path& path);
void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path);
/// Columns epsilon,gap,map,perr,hit_at_1, one row per report.
void write_attack_csv(const std::vector<std::pair<double, MetricsReport>>& rows, const std::filesystem::path& path);
void write_delta_csv(const ClassApDelta& delta, const std::filesystem::path& path);

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

}  // namespace gat
