#include "gat/adversarial.hpp"

#include <cmath>
#include <optional>

#include "gat/error.hpp"
#include "gat/ops.hpp"

namespace gat {

namespace {

constexpr double kZeroGradNorm = 1e-12;

double weight_of(const AdvConfig& cfg) {
  switch (cfg.reg) {
    case RegKind::kFrobenius: return cfg.beta_fr;
    case RegKind::kJs: return cfg.beta_js;
    case RegKind::kNone: return 0.0;
  }
  return 0.0;
}

void check_same_layout(const AttentionMaps& clean, const AttentionMaps& adv) {
  auto same = [](const MapSet& a, const MapSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].size() != b[i].size()) return false;
      for (std::size_t j = 0; j < a[i].size(); ++j) {
        if (a[i][j].shape() != b[i][j].shape()) return false;
      }
    }
    return true;
  };
  if (!same(clean.video, adv.video) || !same(clean.audio, adv.audio)) {
    throw DimensionError("attention regularizer: clean and adversarial maps differ in layout");
  }
}

template <class Term>
Tensor regularizer(const AttentionMaps& clean, const AttentionMaps& adv, Term term) {
  check_same_layout(clean, adv);
  const std::size_t examples = clean.video.size();
  if (examples == 0 || clean.audio.size() != examples) {
    throw DimensionError("attention regularizer: modalities disagree on batch size");
  }
  std::optional<Tensor> total;
  for (const MapSet* pair : {&clean.video, &clean.audio}) {
    const MapSet& adv_set = pair == &clean.video ? adv.video : adv.audio;
    for (std::size_t i = 0; i < examples; ++i) {
      for (std::size_t j = 0; j < (*pair)[i].size(); ++j) {
        Tensor t = term((*pair)[i][j], adv_set[i][j]);
        total = total ? add(*total, t) : t;
      }
    }
  }
  if (!total) return Tensor::scalar(0.0);
  return scale(*total, 1.0 / static_cast<double>(examples));
}

}  // namespace

std::string to_string(RegKind kind) {
  switch (kind) {
    case RegKind::kNone: return "none";
    case RegKind::kFrobenius: return "frobenius";
    case RegKind::kJs: return "js";
  }
  return "none";
}

RegKind parse_reg_kind(const std::string& name) {
  if (name == "none") return RegKind::kNone;
  if (name == "frobenius") return RegKind::kFrobenius;
  if (name == "js") return RegKind::kJs;
  throw ConfigError("unknown regularizer '" + name + "' (expected none, frobenius or js)");
}

void AdvConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and >= 0");
  if (!(alpha >= 0.0) || !(beta_fr >= 0.0) || !(beta_js >= 0.0)) {
    throw ConfigError("loss weights alpha, beta_fr, beta_js must be >= 0");
  }
}

bool AdvConfig::needs_adversarial() const { return alpha > 0.0 || weight_of(*this) > 0.0; }

Tensor fgsm_perturb(const Tensor& x, const Tensor& grad, double epsilon) {
  if (x.shape() != grad.shape() || x.rank() != 2) {
    throw DimensionError("fgsm_perturb: input " + to_string(x.shape()) + " vs gradient " +
                         to_string(grad.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto g = grad.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += g[r * cols + c] * g[r * cols + c];
    const double norm = std::sqrt(sq);
    if (norm <= kZeroGradNorm) continue;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += epsilon * (g[r * cols + c] / norm);
  }
  return Tensor(x.shape(), std::move(out));
}

AdversarialInputs adv_examples(const Batch& batch, const GatParams& params, double epsilon) {
  std::optional<Tape> own;
  std::optional<TapeScope> scope;
  if (Tape::current() == nullptr) {
    own.emplace();
    scope.emplace(*own);
  }

  AdversarialInputs out;
  std::vector<Tensor> video, audio;
  for (const auto& v : batch.video) video.push_back(v.clone(true));
  for (const auto& a : batch.audio) audio.push_back(a.clone(true));
  out.clean = forward_batch(params, video, audio);
  out.clean_loss = bce_loss(out.clean.logits, batch.targets);

  // Only input gradients are wanted here; parameters opt out of this pass.
  std::vector<Tensor> frozen;
  for (const auto& [name, t] : params.named_parameters()) {
    if (t->requires_grad()) frozen.push_back(*t);
  }
  for (auto& t : frozen) t.set_requires_grad(false);
  try {
    Tape::current()->backward(out.clean_loss);
  } catch (...) {
    for (auto& t : frozen) t.set_requires_grad(true);
    throw;
  }
  for (auto& t : frozen) t.set_requires_grad(true);

  for (auto& v : video) {
    out.video.push_back(fgsm_perturb(v, Tensor(v.shape(), v.grad()), epsilon));
    v.zero_grad();
  }
  for (auto& a : audio) {
    out.audio.push_back(fgsm_perturb(a, Tensor(a.shape(), a.grad()), epsilon));
    a.zero_grad();
  }
  return out;
}

AttentionMaps collect_maps(const BatchOutput& out, bool include_local) {
  auto gather = [include_local](const std::vector<ModalityOutput>& outputs) {
    MapSet set;
    for (const auto& example : outputs) {
      std::vector<Tensor> maps;
      for (const auto& record : example.records) {
        maps.push_back(record.mean_map);
        if (!include_local) continue;
        for (const auto& segments : record.local_maps) {
          for (const auto& seg : segments) maps.push_back(mean_leading(seg));
        }
      }
      set.push_back(std::move(maps));
    }
    return set;
  };
  return {gather(out.video), gather(out.audio)};
}

Tensor frobenius_reg(const AttentionMaps& clean, const AttentionMaps& adv) {
  return regularizer(clean, adv,
                     [](const Tensor& a, const Tensor& b) { return frobenius_norm(sub(a, b)); });
}

Tensor js_reg(const AttentionMaps& clean, const AttentionMaps& adv) {
  return regularizer(clean, adv, [](const Tensor& a, const Tensor& b) { return js_divergence_rows(a, b); });
}

namespace {

LossParts assemble(BatchOutput clean, const Tensor& clean_loss, std::span<const Tensor> adv_video,
                   std::span<const Tensor> adv_audio, const Batch& batch, const GatParams& params,
                   const AdvConfig& cfg) {
  LossParts parts;
  parts.clean = std::move(clean);
  parts.ce = clean_loss.item();
  Tensor total = clean_loss;

  BatchOutput adv_out = forward_batch(params, adv_video, adv_audio);
  if (cfg.alpha > 0.0) {
    Tensor ce_adv = bce_loss(adv_out.logits, batch.targets);
    parts.ce_adv = ce_adv.item();
    total = add(total, scale(ce_adv, cfg.alpha));
  }
  const double beta = weight_of(cfg);
  if (beta > 0.0) {
    const AttentionMaps clean_maps = collect_maps(parts.clean, cfg.regularize_local);
    const AttentionMaps adv_maps = collect_maps(adv_out, cfg.regularize_local);
    Tensor reg = cfg.reg == RegKind::kFrobenius ? frobenius_reg(clean_maps, adv_maps)
                                                : js_reg(clean_maps, adv_maps);
    parts.reg = reg.item();
    total = add(total, scale(reg, beta));
  }
  parts.total = total;
  return parts;
}

}  // namespace

LossParts total_loss(const Batch& batch, const GatParams& params, const AdvConfig& cfg) {
  cfg.validate();
  if (!cfg.needs_adversarial()) {
    LossParts parts;
    parts.clean = forward_batch(params, batch.video, batch.audio);
    parts.total = bce_loss(parts.clean.logits, batch.targets);
    parts.ce = parts.total.item();
    return parts;
  }
  AdversarialInputs adv = adv_examples(batch, params, cfg.epsilon);
  return assemble(std::move(adv.clean), adv.clean_loss, adv.video, adv.audio, batch, params, cfg);
}

LossParts loss_at(const Batch& batch, std::span<const Tensor> adv_video,
                  std::span<const Tensor> adv_audio, const GatParams& params, const AdvConfig& cfg) {
  cfg.validate();
  BatchOutput clean = forward_batch(params, batch.video, batch.audio);
  Tensor clean_loss = bce_loss(clean.logits, batch.targets);
  return assemble(std::move(clean), clean_loss, adv_video, adv_audio, batch, params, cfg);
}

}  // namespace gat
