#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gat/attention.hpp"
#include "gat/tensor.hpp"

namespace gat {

struct ModelConfig {
  std::size_t frames = 0;     // T
  std::size_t video_dim = 0;  // D_v
  std::size_t audio_dim = 0;  // D_a
  std::size_t heads = 8;      // M
  std::size_t classes = 0;    // K
  std::size_t hidden = 512;
  std::size_t layers = 1;
  std::size_t ffn_multiplier = 4;
  std::vector<std::size_t> experts{kGlobalWindow, 20};

  /// SA when only the global expert is configured, GMSA otherwise.
  BlockMode mode() const { return experts.size() == 1 ? BlockMode::kSA : BlockMode::kGMSA; }
  AttentionConfig video_attention() const;
  AttentionConfig audio_attention() const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Every learnable tensor of the two-modality classifier.
struct GatParams {
  ModelConfig config;
  std::vector<SABlockParams> video;
  std::vector<SABlockParams> audio;
  Tensor hidden_w, hidden_b;  // [(D_v + D_a) x H], [H]
  Tensor out_w, out_b;        // [H x K], [K]

  static GatParams init(const ModelConfig& config, std::uint64_t seed);

  /// Stable, complete (name, tensor) enumeration.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  /// Deep copy with independent storage.
  GatParams clone() const;
  void zero_grad();
};

/// Sinusoidal table: PE[t][2i] = sin(t / 10000^(2i/D)), PE[t][2i+1] = cos(same).
Tensor positional_encoding(std::size_t frames, std::size_t width);

struct ModalityOutput {
  Tensor pooled;                         // [D]
  std::vector<AttentionRecord> records;  // one per layer
};

/// Positional encoding, encoder layers and temporal mean pooling for one input.
ModalityOutput encode(const Tensor& features, std::span<const SABlockParams> layers,
                      const AttentionConfig& cfg, BlockMode mode, const Tensor& pe);

struct BatchOutput {
  Tensor logits;  // [B x K]
  std::vector<ModalityOutput> video;
  std::vector<ModalityOutput> audio;
};

/// Forward pass over a batch of raw (un-encoded) features.
BatchOutput forward_batch(const GatParams& params, std::span<const Tensor> videos,
                          std::span<const Tensor> audios);

struct Prediction {
  std::vector<double> probabilities;  // independent per-class sigmoids
  std::vector<AttentionRecord> video_records;
  std::vector<AttentionRecord> audio_records;
};

Prediction forward(const Tensor& video, const Tensor& audio, const GatParams& params);

/// Binary checkpoint: magic, format version, hyperparameters, then named
/// tensors as (name, shape, little-endian float64 payload).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const GatParams& params, const std::filesystem::path& path);
/// Throws CheckpointError; nothing is returned on failure.
GatParams load_checkpoint(const std::filesystem::path& path);

}  // namespace gat
