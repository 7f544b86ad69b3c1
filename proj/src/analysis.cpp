#include "gat/analysis.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "gat/error.hpp"
#include "gat/ops.hpp"

namespace gat {

namespace {

// Mean over rows of a [n x n] map, i.e. the attention each frame receives.
std::vector<double> column_means(const Tensor& map) {
  const std::size_t rows = map.dim(0), cols = map.dim(1);
  std::vector<double> out(cols, 0.0);
  const auto v = map.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += v[r * cols + c];
  }
  for (double& x : out) x /= static_cast<double>(rows);
  return out;
}

double frobenius_distance(const Tensor& a, const Tensor& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

template <typename Fn>
void for_each_batch(const Dataset& data, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(make_batch(data, idx), std::span<const std::size_t>(idx));
  }
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write " + path.string());
  return out;
}

std::string optional_cell(const std::vector<double>& v, std::size_t i) {
  return i < v.size() ? format_double(v[i]) : std::string();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

AttentionProfile attention_profile(const AttentionRecord& record) {
  AttentionProfile p;
  p.global = column_means(record.mean_map);
  for (std::size_t e = 0; e < record.windows.size(); ++e) {
    if (record.windows[e] == kGlobalWindow || record.local_maps[e].empty()) continue;
    p.window = record.windows[e];
    for (const Tensor& seg : record.local_maps[e]) {
      const auto part = column_means(mean_leading(seg));
      p.local.insert(p.local.end(), part.begin(), part.end());
    }
    break;
  }
  return p;
}

ExampleAttention example_attention(const GatParams& params, const Example& example, double epsilon) {
  Dataset one;
  one.frames = params.config.frames;
  one.video_dim = params.config.video_dim;
  one.audio_dim = params.config.audio_dim;
  one.classes = params.config.classes;
  one.examples = {example};
  const std::size_t idx = 0;
  const Batch batch = make_batch(one, std::span(&idx, 1));

  AdversarialInputs adv;
  {
    Tape tape;
    TapeScope scope(tape);
    adv = adv_examples(batch, params, epsilon);
  }
  NoGradScope no_grad;
  const BatchOutput adv_out = forward_batch(params, adv.video, adv.audio);
  ExampleAttention out;
  out.video = attention_profile(adv.clean.video[0].records.front());
  out.audio = attention_profile(adv.clean.audio[0].records.front());
  out.adv_video = attention_profile(adv_out.video[0].records.front());
  out.adv_audio = attention_profile(adv_out.audio[0].records.front());
  return out;
}

MetricsReport attack_eval(const GatParams& params, const Dataset& data, double epsilon, std::size_t k,
                          std::size_t batch_size) {
  if (data.size() == 0) throw DataError(DataError::Kind::kInconsistent, "attack: empty dataset");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack: epsilon must be >= 0");
  check_compatible(params.config, data);
  PredictionSet preds;
  preds.reserve(data.size());
  for_each_batch(data, batch_size, [&](const Batch& batch, std::span<const std::size_t> idx) {
    AdversarialInputs adv;
    {
      Tape tape;
      TapeScope scope(tape);
      adv = adv_examples(batch, params, epsilon);
    }
    NoGradScope no_grad;
    const Tensor probs = sigmoid(forward_batch(params, adv.video, adv.audio).logits);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const Example& ex = data.examples[idx[r]];
      const auto row = probs.values().subspan(r * data.classes, data.classes);
      preds.push_back({ex.id, std::vector<double>(row.begin(), row.end()), ex.labels});
    }
  });
  return compute_metrics(preds, k);
}

DriftReport drift_norm(const GatParams& params, const Dataset& data, double epsilon, std::size_t batch_size) {
  if (data.size() == 0) throw DataError(DataError::Kind::kInconsistent, "drift: empty dataset");
  check_compatible(params.config, data);
  DriftReport out;
  for_each_batch(data, batch_size, [&](const Batch& batch, std::span<const std::size_t>) {
    AdversarialInputs adv;
    {
      Tape tape;
      TapeScope scope(tape);
      adv = adv_examples(batch, params, epsilon);
    }
    NoGradScope no_grad;
    const BatchOutput adv_out = forward_batch(params, adv.video, adv.audio);
    auto accumulate = [](const std::vector<ModalityOutput>& clean, const std::vector<ModalityOutput>& pert) {
      double s = 0.0;
      for (std::size_t i = 0; i < clean.size(); ++i) {
        for (std::size_t l = 0; l < clean[i].records.size(); ++l) {
          s += frobenius_distance(clean[i].records[l].mean_map, pert[i].records[l].mean_map);
        }
      }
      return s;
    };
    out.video += accumulate(adv.clean.video, adv_out.video);
    out.audio += accumulate(adv.clean.audio, adv_out.audio);
  });
  out.video /= static_cast<double>(data.size());
  out.audio /= static_cast<double>(data.size());
  out.total = out.video + out.audio;
  return out;
}

std::vector<ClassDelta> ClassApDelta::top(std::size_t n) const {
  return {sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(std::min(n, sorted.size()))};
}

std::vector<ClassDelta> ClassApDelta::bottom(std::size_t n) const {
  const std::size_t m = std::min(n, sorted.size());
  return {sorted.end() - static_cast<std::ptrdiff_t>(m), sorted.end()};
}

double ClassApDelta::sum() const {
  double s = 0.0;
  for (const auto& d : sorted) s += d.delta;
  return s;
}

ClassApDelta class_ap_delta(const MetricsReport& a, const MetricsReport& b) {
  if (a.per_class_ap.size() != b.per_class_ap.size()) {
    throw DataError(DataError::Kind::kInconsistent,
                    "compare-classes: reports have " + std::to_string(a.per_class_ap.size()) + " and " +
                        std::to_string(b.per_class_ap.size()) + " classes");
  }
  ClassApDelta out;
  for (std::size_t c = 0; c < a.per_class_ap.size(); ++c) {
    if (std::isnan(a.per_class_ap[c]) || std::isnan(b.per_class_ap[c])) continue;
    out.sorted.push_back({c, a.per_class_ap[c] - b.per_class_ap[c]});
  }
  std::stable_sort(out.sorted.begin(), out.sorted.end(),
                   [](const ClassDelta& x, const ClassDelta& y) { return x.delta > y.delta; });
  return out;
}

PartitionSummary partitioned_metrics(const PredictionSet& preds, std::size_t n, std::size_t k) {
  if (n == 0) throw ConfigError("partitions must be >= 1");
  if (n > preds.size()) {
    throw ConfigError("cannot split " + std::to_string(preds.size()) + " predictions into " + std::to_string(n) +
                      " partitions");
  }
  PartitionSummary out;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t lo = p * preds.size() / n, hi = (p + 1) * preds.size() / n;
    out.parts.push_back(compute_metrics(PredictionSet(preds.begin() + lo, preds.begin() + hi), k));
  }
  auto fields = [](MetricsReport& r) { return std::array<double*, 4>{&r.gap, &r.map, &r.perr, &r.hit_at_1}; };
  out.mean.k = out.sd.k = k;
  const auto mean_f = fields(out.mean);
  const auto sd_f = fields(out.sd);
  for (std::size_t f = 0; f < 4; ++f) {
    double s = 0.0;
    for (auto& r : out.parts) s += *fields(r)[f];
    *mean_f[f] = s / static_cast<double>(n);
    double ss = 0.0;
    for (auto& r : out.parts) ss += (*fields(r)[f] - *mean_f[f]) * (*fields(r)[f] - *mean_f[f]);
    *sd_f[f] = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }
  return out;
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::kEpsilon: return "epsilon";
    case SweepParam::kAlpha: return "alpha";
    case SweepParam::kWindow: return "window";
  }
  return "epsilon";
}

SweepParam parse_sweep_param(const std::string& name) {
  for (SweepParam p : {SweepParam::kEpsilon, SweepParam::kAlpha, SweepParam::kWindow}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown sweep parameter '" + name + "' (expected epsilon, alpha or window)");
}

Experiment with_value(Experiment base, SweepParam param, double value) {
  switch (param) {
    case SweepParam::kEpsilon: base.train.adv.epsilon = value; break;
    case SweepParam::kAlpha: base.train.adv.alpha = value; break;
    case SweepParam::kWindow: {
      if (!(value >= 0.0) || value != std::floor(value)) {
        throw ConfigError("window must be a non-negative integer, got " + format_double(value));
      }
      base.model.experts = {kGlobalWindow, static_cast<std::size_t>(value)};
      break;
    }
  }
  return base;
}

SweepResult sweep(SweepParam param, std::vector<double> grid, const Experiment& base, const Dataset& train_set,
                  const Dataset& val_set, std::size_t jobs) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  std::sort(grid.begin(), grid.end());
  SweepResult out;
  out.param = param;
  out.points.resize(grid.size());

  auto run_point = [&](std::size_t i) {
    SweepPoint& point = out.points[i];
    point.value = grid[i];
    point.val_gap = std::numeric_limits<double>::quiet_NaN();
    point.drift = std::numeric_limits<double>::quiet_NaN();
    try {
      const Experiment e = with_value(base, param, grid[i]);
      const TrainResult r = train(train_set, val_set, e.model, e.train);
      point.val_gap = r.best_val_gap;
      point.drift = drift_norm(r.best, val_set, e.attack_epsilon).total;
    } catch (const std::exception& ex) {
      point.error = ex.what();
    }
  };

  // Each worker writes only its own points; the tape is thread-local.
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < grid.size(); i = next++) run_point(i);
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, grid.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return out;
}

void write_profile_csv(const ExampleAttention& att, bool audio, const std::filesystem::path& path) {
  const AttentionProfile& clean = audio ? att.audio : att.video;
  const AttentionProfile& adv = audio ? att.adv_audio : att.adv_video;
  std::ofstream out = open_csv(path);
  out << "frame_index,global_weight,local_weight,adv_global_weight,adv_local_weight\n";
  for (std::size_t t = 0; t < clean.global.size(); ++t) {
    out << t << ',' << format_double(clean.global[t]) << ',' << optional_cell(clean.local, t) << ','
        << format_double(adv.global[t]) << ',' << optional_cell(adv.local, t) << '\n';
  }
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "param,param_value,val_gap,drift,error\n";
  for (const auto& p : result.points) {
    std::string err = p.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out << to_string(result.param) << ',' << format_double(p.value) << ','
        << (p.error.empty() ? format_double(p.val_gap) : "") << ','
        << (p.error.empty() ? format_double(p.drift) : "") << ",\"" << err << "\"\n";
  }
}

void write_attack_csv(const std::vector<std::pair<double, MetricsReport>>& rows, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "epsilon,gap,map,perr,hit_at_1\n";
  for (const auto& [eps, r] : rows) {
    out << format_double(eps) << ',' << format_double(r.gap) << ',' << format_double(r.map) << ','
        << format_double(r.perr) << ',' << format_double(r.hit_at_1) << '\n';
  }
}

void write_delta_csv(const ClassApDelta& delta, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "class,ap_delta\n";
  for (const auto& d : delta.sorted) out << d.cls << ',' << format_double(d.delta) << '\n';
}

}  // namespace gat
