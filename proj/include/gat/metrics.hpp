#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace gat {

struct VideoPrediction {
  std::size_t id = 0;
  std::vector<double> scores;       // one per class
  std::vector<std::size_t> labels;  // ground-truth class ids, non-empty
};

using PredictionSet = std::vector<VideoPrediction>;

inline constexpr std::size_t kDefaultGapTopK = 20;

struct MetricsReport {
  double gap = 0.0;
  double map = 0.0;
  double perr = 0.0;
  double hit_at_1 = 0.0;
  /// NaN for classes without positives; those are left out of `map`.
  std::vector<double> per_class_ap;
  std::size_t k = kDefaultGapTopK;
};

/// Throws on an empty set, ragged score vectors, non-finite scores, or labels
/// outside [0, K). Returns K.
std::size_t validate_predictions(const PredictionSet& preds);

/// Average precision over the pooled top-k (video, class) pairs of every
/// video. Ties are broken by video id, then class id. The denominator is the
/// sum over videos of min(|labels|, k).
double gap(const PredictionSet& preds, std::size_t k = kDefaultGapTopK);

struct MeanAp {
  double map = 0.0;
  std::vector<double> per_class;
};

/// Per-class AP over videos ranked by that class's score (ties: video id).
MeanAp mean_ap(const PredictionSet& preds);

/// Mean over videos of the precision among the top |labels| classes.
double perr(const PredictionSet& preds);

/// Fraction of videos whose top class (ties: lowest id) is a label.
double hit_at_1(const PredictionSet& preds);

MetricsReport compute_metrics(const PredictionSet& preds, std::size_t k = kDefaultGapTopK);

/// JSON document with keys gap, map, perr, hit_at_1, per_class_ap (null for
/// excluded classes) and k.
std::string to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& text);

}  // namespace gat
