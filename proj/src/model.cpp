#include "gat/model.hpp"

#include <cmath>
#include <random>

#include "gat/error.hpp"
#include "gat/ops.hpp"

namespace gat {

namespace {

Tensor xavier(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(fan_in * fan_out);
  for (auto& v : values) v = dist(rng);
  return Tensor({fan_in, fan_out}, std::move(values), true);
}

AttentionConfig attention_for(const ModelConfig& c, std::size_t width) {
  return AttentionConfig{c.frames, width, c.heads, c.experts, c.ffn_multiplier};
}

}  // namespace

AttentionConfig ModelConfig::video_attention() const { return attention_for(*this, video_dim); }
AttentionConfig ModelConfig::audio_attention() const { return attention_for(*this, audio_dim); }

void ModelConfig::validate() const {
  if (classes < 1) throw ConfigError("model: at least one class is required");
  if (hidden < 1) throw ConfigError("model: hidden width must be positive");
  if (layers < 1) throw ConfigError("model: at least one encoder layer is required");
  if (video_dim % 2 != 0 || audio_dim % 2 != 0) {
    throw ConfigError("model: positional encoding needs even feature widths, got D_v = " +
                      std::to_string(video_dim) + ", D_a = " + std::to_string(audio_dim));
  }
  video_attention().validate();
  audio_attention().validate();
}

GatParams GatParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  GatParams p;
  p.config = config;
  const auto va = config.video_attention(), aa = config.audio_attention();
  for (std::size_t l = 0; l < config.layers; ++l) p.video.push_back(SABlockParams::init(va, rng));
  for (std::size_t l = 0; l < config.layers; ++l) p.audio.push_back(SABlockParams::init(aa, rng));
  p.hidden_w = xavier(rng, config.video_dim + config.audio_dim, config.hidden);
  p.hidden_b = Tensor::zeros({config.hidden}, true);
  p.out_w = xavier(rng, config.hidden, config.classes);
  p.out_b = Tensor::zeros({config.classes}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> GatParams::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t l = 0; l < video.size(); ++l) {
    auto n = video[l].named("video." + std::to_string(l) + ".");
    out.insert(out.end(), n.begin(), n.end());
  }
  for (std::size_t l = 0; l < audio.size(); ++l) {
    auto n = audio[l].named("audio." + std::to_string(l) + ".");
    out.insert(out.end(), n.begin(), n.end());
  }
  out.insert(out.end(), {{"mlp.hidden.weight", &hidden_w},
                         {"mlp.hidden.bias", &hidden_b},
                         {"mlp.out.weight", &out_w},
                         {"mlp.out.bias", &out_b}});
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> GatParams::named_parameters() const {
  auto mutable_view = const_cast<GatParams*>(this)->named_parameters();
  return {mutable_view.begin(), mutable_view.end()};
}

GatParams GatParams::clone() const {
  GatParams copy = *this;
  for (auto& [name, t] : copy.named_parameters()) *t = t->clone(t->requires_grad());
  return copy;
}

void GatParams::zero_grad() {
  for (auto& [name, t] : named_parameters()) t->zero_grad();
}

Tensor positional_encoding(std::size_t frames, std::size_t width) {
  if (width % 2 != 0) {
    throw ConfigError("positional encoding requires an even width, got " + std::to_string(width));
  }
  std::vector<double> values(frames * width);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double angle = static_cast<double>(t) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(width));
      values[t * width + 2 * i] = std::sin(angle);
      values[t * width + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({frames, width}, std::move(values));
}

ModalityOutput encode(const Tensor& features, std::span<const SABlockParams> layers,
                      const AttentionConfig& cfg, BlockMode mode, const Tensor& pe) {
  if (features.shape() != pe.shape()) {
    throw DimensionError("encoder input " + to_string(features.shape()) + " expected " +
                         to_string(pe.shape()));
  }
  ModalityOutput out;
  Tensor x = add(features, pe);
  for (const auto& layer : layers) {
    BlockOutput block = sa_block(x, layer, cfg, mode);
    x = block.output;
    out.records.push_back(std::move(block.record));
  }
  out.pooled = mean_rows(x);
  return out;
}

BatchOutput forward_batch(const GatParams& params, std::span<const Tensor> videos,
                          std::span<const Tensor> audios) {
  const ModelConfig& c = params.config;
  if (videos.size() != audios.size() || videos.empty()) {
    throw DimensionError("forward_batch: " + std::to_string(videos.size()) + " video and " +
                         std::to_string(audios.size()) + " audio inputs");
  }
  const Tensor pe_v = positional_encoding(c.frames, c.video_dim);
  const Tensor pe_a = positional_encoding(c.frames, c.audio_dim);
  const auto va = c.video_attention(), aa = c.audio_attention();
  const BlockMode mode = c.mode();

  BatchOutput out;
  std::vector<Tensor> pooled;
  pooled.reserve(videos.size());
  for (std::size_t b = 0; b < videos.size(); ++b) {
    if (videos[b].rank() != 2 || audios[b].rank() != 2 || videos[b].dim(0) != audios[b].dim(0)) {
      throw DimensionError("modalities disagree on frame count: video " + to_string(videos[b].shape()) +
                           ", audio " + to_string(audios[b].shape()));
    }
    out.video.push_back(encode(videos[b], params.video, va, mode, pe_v));
    out.audio.push_back(encode(audios[b], params.audio, aa, mode, pe_a));
    Tensor both[] = {out.video.back().pooled, out.audio.back().pooled};
    pooled.push_back(concat_cols(both));
  }
  Tensor features = concat_rows(pooled);
  Tensor hidden = relu(add_bias(matmul(features, params.hidden_w), params.hidden_b));
  out.logits = add_bias(matmul(hidden, params.out_w), params.out_b);
  return out;
}

Prediction forward(const Tensor& video, const Tensor& audio, const GatParams& params) {
  Tensor v[] = {video};
  Tensor a[] = {audio};
  BatchOutput out = forward_batch(params, v, a);
  Prediction p;
  Tensor probs = sigmoid(out.logits);
  p.probabilities.assign(probs.values().begin(), probs.values().end());
  p.video_records = std::move(out.video[0].records);
  p.audio_records = std::move(out.audio[0].records);
  return p;
}

}  // namespace gat
