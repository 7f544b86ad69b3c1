#pragma once

#include <span>
#include <string>
#include <vector>

#include "gat/model.hpp"
#include "gat/tensor.hpp"

namespace gat {

enum class RegKind { kNone, kFrobenius, kJs };

std::string to_string(RegKind kind);
/// Accepts "none", "frobenius" and "js".
RegKind parse_reg_kind(const std::string& name);

struct AdvConfig {
  double epsilon = 0.5;  // perturbation radius per frame, in feature units
  double alpha = 1.0;    // weight of the adversarial cross-entropy
  double beta_fr = 0.001;
  double beta_js = 0.01;
  RegKind reg = RegKind::kNone;
  /// Also regularize head-averaged local segment maps (off: global map only).
  bool regularize_local = false;

  void validate() const;
  /// Whether the adversarial forward pass contributes anything to the loss.
  bool needs_adversarial() const;
};

/// A mini-batch of raw features and multi-hot targets.
struct Batch {
  std::vector<Tensor> video;  // B x [T x D_v]
  std::vector<Tensor> audio;  // B x [T x D_a]
  Tensor targets;             // [B x K], entries in {0, 1}
};

/// X + R where row r of R is epsilon * G[r] / |G[r]|, or zero when |G[r]| <= 1e-12.
/// The result is a constant leaf: no gradient flows back through R.
Tensor fgsm_perturb(const Tensor& x, const Tensor& grad, double epsilon);

struct AdversarialInputs {
  std::vector<Tensor> video;
  std::vector<Tensor> audio;
  BatchOutput clean;  // the forward pass the gradients came from
  Tensor clean_loss;  // BCE of `clean`
};

/// One clean forward and backward of the BCE loss with respect to the inputs,
/// then FGSM on each modality. Parameter gradients are left untouched. Records
/// on the current tape when one is active so the clean pass can be reused.
AdversarialInputs adv_examples(const Batch& batch, const GatParams& params, double epsilon);

/// Attention maps of one modality: maps[i] lists the regularized [T x T]
/// maps of example i (one per layer, plus local segment maps when enabled).
using MapSet = std::vector<std::vector<Tensor>>;

struct AttentionMaps {
  MapSet video;
  MapSet audio;
};

AttentionMaps collect_maps(const BatchOutput& out, bool include_local);

/// Mean over examples of the summed Frobenius norms |A - A_adv|, summed over modalities.
Tensor frobenius_reg(const AttentionMaps& clean, const AttentionMaps& adv);
/// Mean over examples of the row-averaged Jensen-Shannon divergence, summed over modalities.
Tensor js_reg(const AttentionMaps& clean, const AttentionMaps& adv);

struct LossParts {
  Tensor total;
  double ce = 0.0;
  double ce_adv = 0.0;  // 0 when the adversarial pass is skipped
  double reg = 0.0;     // unweighted; 0 when its weight is 0
  BatchOutput clean;
};

/// L = L_CE + alpha * L_CE^adv + beta * L_reg, built on the current tape.
LossParts total_loss(const Batch& batch, const GatParams& params, const AdvConfig& cfg);

/// The same combined loss with the adversarial inputs supplied by the caller,
/// always evaluating the adversarial branch. Useful when the perturbation must
/// stay fixed while parameters move, as in finite-difference checks.
LossParts loss_at(const Batch& batch, std::span<const Tensor> adv_video,
                  std::span<const Tensor> adv_audio, const GatParams& params, const AdvConfig& cfg);

}  // namespace gat
