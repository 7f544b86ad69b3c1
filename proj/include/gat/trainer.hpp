#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gat/adversarial.hpp"
#include "gat/data.hpp"
#include "gat/metrics.hpp"
#include "gat/model.hpp"

namespace gat {

/// The five training setups compared in the experiments.
enum class TrainMode { kSaCe, kGmsaCe, kGmsaAdv, kGatFr, kGatJs };

std::string to_string(TrainMode mode);
/// Accepts sa-ce, gmsa-ce, gmsa-adv, gat-fr, gat-js.
TrainMode parse_mode(const std::string& name);

/// SA modes use a single global expert; GMSA modes require at least two experts.
ModelConfig model_for_mode(ModelConfig model, TrainMode mode);
/// Loss terms switched on by the mode; weights and epsilon come from `adv`.
AdvConfig adv_for_mode(AdvConfig adv, TrainMode mode);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Validate every this many steps; 0 means once per epoch.
  std::size_t eval_every = 0;
  std::size_t early_stop_patience = 5;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_patience = 3;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  /// Stop after this many steps; 0 means no limit.
  std::size_t max_steps = 0;
  std::size_t gap_k = kDefaultGapTopK;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kGatFr;
  AdvConfig adv;

  void validate() const;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every tensor from its gradient buffer.
/// Throws ConfigError if a tensor has no gradient buffer.
void adam_step(std::span<Tensor* const> params, AdamState& state, double lr, const AdamOptions& opts = {});

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor* const> params, double max_norm);

struct TrainResult {
  GatParams best;  // parameters at the best validation GAP
  double best_val_gap = -std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  /// JSON-lines records: {"type":"step",...} per update, {"type":"eval",...} per validation.
  std::vector<std::string> log;
};

/// Trains a freshly initialized model (seeded from cfg.seed) on `train_set`,
/// validating on `val_set`.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const ModelConfig& model,
                  const TrainConfig& cfg);

/// Throws CheckpointError(kInconsistent) when the dataset's T, D_v, D_a or K
/// differ from the model's.
void check_compatible(const ModelConfig& model, const Dataset& data);

/// Per-class sigmoid scores for every example, without recording gradients.
PredictionSet predict(const GatParams& params, const Dataset& data, std::size_t batch_size = 64);

MetricsReport evaluate(const GatParams& params, const Dataset& data, std::size_t k = kDefaultGapTopK);

/// Mean BCE over the dataset, without recording gradients.
double dataset_loss(const GatParams& params, const Dataset& data, std::size_t batch_size = 64);

}  // namespace gat
