#include "gat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "gat/error.hpp"

namespace gat {

namespace {

// Class ids of one video, best score first; equal scores keep ascending id.
std::vector<std::size_t> ranked_classes(const VideoPrediction& v) {
  std::vector<std::size_t> order(v.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v.scores[a] > v.scores[b]; });
  return order;
}

std::vector<bool> label_mask(const VideoPrediction& v) {
  std::vector<bool> mask(v.scores.size(), false);
  for (std::size_t c : v.labels) mask[c] = true;
  return mask;
}

// Hits listed in rank order; returns sum over hits of precision at that rank.
double precision_sum(const std::vector<bool>& hits_in_order) {
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < hits_in_order.size(); ++r) {
    if (!hits_in_order[r]) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return total;
}

}  // namespace

std::size_t validate_predictions(const PredictionSet& preds) {
  if (preds.empty()) throw DataError(DataError::Kind::kInconsistent, "metrics: empty prediction set");
  const std::size_t classes = preds.front().scores.size();
  if (classes == 0) throw DataError(DataError::Kind::kInconsistent, "metrics: no classes");
  for (const auto& v : preds) {
    const std::string where = "metrics: video " + std::to_string(v.id);
    if (v.scores.size() != classes) {
      throw DataError(DataError::Kind::kInconsistent,
                      where + " has " + std::to_string(v.scores.size()) + " scores, expected " +
                          std::to_string(classes));
    }
    for (double s : v.scores) {
      if (!std::isfinite(s)) throw NumericError(where + " has a non-finite score");
    }
    if (v.labels.empty()) throw DataError(DataError::Kind::kBadLabel, where + " has no labels");
    for (std::size_t c : v.labels) {
      if (c >= classes) {
        throw DataError(DataError::Kind::kBadLabel,
                        where + " has label " + std::to_string(c) + " >= K = " + std::to_string(classes));
      }
    }
  }
  return classes;
}

double gap(const PredictionSet& preds, std::size_t k) {
  validate_predictions(preds);
  if (k == 0) throw ConfigError("gap: k must be at least 1");
  struct Entry {
    double score;
    std::size_t video, cls;
    bool hit;
  };
  std::vector<Entry> pooled;
  double positives = 0.0;
  for (const auto& v : preds) {
    const auto order = ranked_classes(v);
    const auto mask = label_mask(v);
    const std::size_t take = std::min(k, order.size());
    for (std::size_t i = 0; i < take; ++i) pooled.push_back({v.scores[order[i]], v.id, order[i], mask[order[i]]});
    positives += static_cast<double>(std::min(v.labels.size(), k));
  }
  std::sort(pooled.begin(), pooled.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.video != b.video) return a.video < b.video;
    return a.cls < b.cls;
  });
  std::vector<bool> hits;
  hits.reserve(pooled.size());
  for (const auto& e : pooled) hits.push_back(e.hit);
  return precision_sum(hits) / positives;
}

MeanAp mean_ap(const PredictionSet& preds) {
  const std::size_t classes = validate_predictions(preds);
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<bool>> masks;
  for (const auto& v : preds) masks.push_back(label_mask(v));

  MeanAp out;
  out.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (preds[a].scores[c] != preds[b].scores[c]) return preds[a].scores[c] > preds[b].scores[c];
      return preds[a].id < preds[b].id;
    });
    std::vector<bool> hits;
    std::size_t positives = 0;
    for (std::size_t i : order) {
      hits.push_back(masks[i][c]);
      positives += masks[i][c] ? 1 : 0;
    }
    if (positives == 0) continue;
    out.per_class[c] = precision_sum(hits) / static_cast<double>(positives);
    total += out.per_class[c];
    ++counted;
  }
  if (counted == 0) throw DataError(DataError::Kind::kBadLabel, "mean_ap: no class has positives");
  out.map = total / static_cast<double>(counted);
  return out;
}

double perr(const PredictionSet& preds) {
  validate_predictions(preds);
  // Summed in video-id order so the result does not depend on input order.
  std::vector<std::size_t> by_id(preds.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return preds[a].id < preds[b].id; });
  double total = 0.0;
  for (std::size_t i : by_id) {
    const VideoPrediction& v = preds[i];
    const auto order = ranked_classes(v);
    const auto mask = label_mask(v);
    const std::size_t n = v.labels.size();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += mask[order[i]] ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(n);
  }
  return total / static_cast<double>(preds.size());
}

double hit_at_1(const PredictionSet& preds) {
  validate_predictions(preds);
  std::size_t hits = 0;
  for (const auto& v : preds) {
    const auto top = static_cast<std::size_t>(std::max_element(v.scores.begin(), v.scores.end()) -
                                              v.scores.begin());
    hits += label_mask(v)[top] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

MetricsReport compute_metrics(const PredictionSet& preds, std::size_t k) {
  MetricsReport r;
  r.k = k;
  r.gap = gap(preds, k);
  MeanAp m = mean_ap(preds);
  r.map = m.map;
  r.per_class_ap = std::move(m.per_class);
  r.perr = perr(preds);
  r.hit_at_1 = hit_at_1(preds);
  return r;
}

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["gap"] = report.gap;
  j["map"] = report.map;
  j["perr"] = report.perr;
  j["hit_at_1"] = report.hit_at_1;
  auto& per_class = j["per_class_ap"] = nlohmann::ordered_json::array();
  for (double ap : report.per_class_ap) {
    if (std::isnan(ap)) {
      per_class.push_back(nullptr);
    } else {
      per_class.push_back(ap);
    }
  }
  j["k"] = report.k;
  return j.dump(2) + "\n";
}

MetricsReport metrics_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.gap = j.at("gap").get<double>();
    r.map = j.at("map").get<double>();
    r.perr = j.at("perr").get<double>();
    r.hit_at_1 = j.at("hit_at_1").get<double>();
    r.k = j.at("k").get<std::size_t>();
    for (const auto& ap : j.at("per_class_ap")) {
      r.per_class_ap.push_back(ap.is_null() ? std::numeric_limits<double>::quiet_NaN() : ap.get<double>());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Kind::kMalformed, std::string("metrics report: ") + e.what());
  }
}

}  // namespace gat
