#include "gat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

#include "gat/error.hpp"
#include "gat/ops.hpp"

namespace gat {

namespace {

using nlohmann::ordered_json;

// Keeps the shuffling stream independent of parameter initialization.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

std::vector<Tensor*> parameter_list(GatParams& params) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params.named_parameters()) out.push_back(t);
  return out;
}

std::string format_losses(const LossParts& parts) {
  return "loss " + std::to_string(parts.total.item()) + " (ce " + std::to_string(parts.ce) + ", ce_adv " +
         std::to_string(parts.ce_adv) + ", reg " + std::to_string(parts.reg) + ")";
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSaCe: return "sa-ce";
    case TrainMode::kGmsaCe: return "gmsa-ce";
    case TrainMode::kGmsaAdv: return "gmsa-adv";
    case TrainMode::kGatFr: return "gat-fr";
    case TrainMode::kGatJs: return "gat-js";
  }
  return "gat-fr";
}

TrainMode parse_mode(const std::string& name) {
  for (TrainMode m : {TrainMode::kSaCe, TrainMode::kGmsaCe, TrainMode::kGmsaAdv, TrainMode::kGatFr,
                      TrainMode::kGatJs}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + name + "' (expected sa-ce, gmsa-ce, gmsa-adv, gat-fr or gat-js)");
}

ModelConfig model_for_mode(ModelConfig model, TrainMode mode) {
  if (mode == TrainMode::kSaCe) {
    model.experts = {kGlobalWindow};
  } else if (model.experts.size() < 2) {
    throw ConfigError("mode " + to_string(mode) + " needs at least two experts");
  }
  return model;
}

AdvConfig adv_for_mode(AdvConfig adv, TrainMode mode) {
  switch (mode) {
    case TrainMode::kSaCe:
    case TrainMode::kGmsaCe:
      adv.alpha = 0.0;
      adv.reg = RegKind::kNone;
      break;
    case TrainMode::kGmsaAdv: adv.reg = RegKind::kNone; break;
    case TrainMode::kGatFr: adv.reg = RegKind::kFrobenius; break;
    case TrainMode::kGatJs: adv.reg = RegKind::kJs; break;
  }
  return adv;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1) and eps must be positive");
  }
  if (early_stop_patience == 0 || lr_decay_patience == 0) throw ConfigError("train: patience values must be >= 1");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ConfigError("train: LR decay factor must be in (0, 1]");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
  if (gap_k == 0) throw ConfigError("train: gap_k must be >= 1");
  adv.validate();
}

void adam_step(std::span<Tensor* const> params, AdamState& state, double lr, const AdamOptions& opts) {
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ConfigError("adam_step: parameter list changed between steps");
  for (Tensor* p : params) {
    if (!p->has_grad()) throw ConfigError("adam_step: a parameter of shape " + to_string(p->shape()) + " has no gradient");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->mutable_values();
    const auto g = params[i]->mutable_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * g[j];
      v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opts.eps);
    }
  }
}

double clip_grad_norm(std::span<Tensor* const> params, double max_norm) {
  double sq = 0.0;
  for (Tensor* p : params) {
    for (double g : p->mutable_grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor* p : params) {
      for (double& g : p->mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void check_compatible(const ModelConfig& model, const Dataset& data) {
  if (model.frames != data.frames || model.video_dim != data.video_dim || model.audio_dim != data.audio_dim ||
      model.classes != data.classes) {
    throw CheckpointError(CheckpointError::Kind::kInconsistent,
                          "model expects T = " + std::to_string(model.frames) + ", D_v = " +
                              std::to_string(model.video_dim) + ", D_a = " + std::to_string(model.audio_dim) +
                              ", K = " + std::to_string(model.classes) + "; dataset has T = " +
                              std::to_string(data.frames) + ", D_v = " + std::to_string(data.video_dim) +
                              ", D_a = " + std::to_string(data.audio_dim) + ", K = " + std::to_string(data.classes));
  }
}

PredictionSet predict(const GatParams& params, const Dataset& data, std::size_t batch_size) {
  check_compatible(params.config, data);
  NoGradScope no_grad;
  PredictionSet out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx);
    const Tensor probs = sigmoid(forward_batch(params, b.video, b.audio).logits);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const Example& ex = data.examples[idx[r]];
      VideoPrediction p;
      p.id = ex.id;
      p.labels = ex.labels;
      const auto row = probs.values().subspan(r * data.classes, data.classes);
      p.scores.assign(row.begin(), row.end());
      out.push_back(std::move(p));
    }
  }
  return out;
}

MetricsReport evaluate(const GatParams& params, const Dataset& data, std::size_t k) {
  if (data.size() == 0) throw DataError(DataError::Kind::kInconsistent, "evaluate: empty dataset");
  return compute_metrics(predict(params, data), k);
}

double dataset_loss(const GatParams& params, const Dataset& data, std::size_t batch_size) {
  check_compatible(params.config, data);
  NoGradScope no_grad;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx);
    total += bce_loss(forward_batch(params, b.video, b.audio).logits, b.targets).item() *
             static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const ModelConfig& model,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw DataError(DataError::Kind::kInconsistent, "train: training and validation sets must be non-empty");
  }
  const ModelConfig model_cfg = model_for_mode(model, cfg.mode);
  const AdvConfig adv = adv_for_mode(cfg.adv, cfg.mode);
  check_compatible(model_cfg, train_set);
  check_compatible(model_cfg, val_set);

  GatParams params = GatParams::init(model_cfg, cfg.seed);
  const std::vector<Tensor*> plist = parameter_list(params);
  const AdamOptions adam{cfg.beta1, cfg.beta2, cfg.adam_eps};
  AdamState state;
  std::mt19937_64 shuffle_rng(cfg.seed ^ kShuffleStream);

  TrainResult result;
  result.best = params.clone();
  double lr = cfg.lr;
  std::size_t since_best = 0, since_decay = 0;
  std::size_t epoch = 0, last_eval_step = 0;
  bool early = false, capped = false;

  auto validate_now = [&]() {
    const double val_gap = evaluate(params, val_set, cfg.gap_k).gap;
    last_eval_step = result.steps;
    if (val_gap > result.best_val_gap) {
      result.best_val_gap = val_gap;
      result.best = params.clone();
      since_best = since_decay = 0;
    } else {
      ++since_best;
      ++since_decay;
      if (since_decay >= cfg.lr_decay_patience) {
        lr *= cfg.lr_decay_factor;
        since_decay = 0;
      }
      early = since_best >= cfg.early_stop_patience;
    }
    ordered_json rec = {{"type", "eval"},     {"step", result.steps},
                        {"epoch", epoch},     {"val_gap", val_gap},
                        {"best_val_gap", result.best_val_gap}, {"lr", lr}};
    result.log.push_back(rec.dump());
  };

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size() && !early && !capped; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Batch batch = make_batch(train_set, std::span(order).subspan(start, end - start));

      params.zero_grad();
      Tape tape;
      TapeScope scope(tape);
      LossParts parts = total_loss(batch, params, adv);
      const double loss = parts.total.item();
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(result.steps + 1) + ", epoch " +
                           std::to_string(epoch) + ": " + format_losses(parts));
      }
      tape.backward(parts.total);
      if (cfg.grad_clip > 0.0) clip_grad_norm(plist, cfg.grad_clip);
      adam_step(plist, state, lr, adam);
      ++result.steps;

      ordered_json rec = {{"type", "step"},         {"step", result.steps}, {"epoch", epoch},
                          {"lr", lr},               {"loss", loss},         {"ce", parts.ce},
                          {"ce_adv", parts.ce_adv}, {"reg", parts.reg}};
      result.log.push_back(rec.dump());

      if (cfg.eval_every > 0 && result.steps % cfg.eval_every == 0) validate_now();
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) capped = true;
    }
    result.epochs_run = epoch;
    if (cfg.eval_every == 0 && !early) validate_now();
    if (early || capped) break;
  }
  // The final parameters are always considered for selection.
  if (!early && last_eval_step != result.steps) validate_now();
  result.stopped_early = early;
  return result;
}

}  // namespace gat
