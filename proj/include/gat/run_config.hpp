#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gat/analysis.hpp"
#include "gat/data.hpp"
#include "gat/model.hpp"
#include "gat/trainer.hpp"

namespace gat {

/// Every setting a command can use, loadable from key=value text.
/// Model shapes (T, D_v, D_a, K) come from the dataset at training time;
/// frames/video_dim/audio_dim/classes here drive generation only.
struct RunConfig {
  GenSpec gen;
  std::string motifs = "alternate";  // alternate, global or local

  std::string dataset;
  std::array<double, 3> split{0.8, 0.1, 0.1};  // relative weights, normalized
  std::uint64_t split_seed = 0;
  bool fit_frames = false;

  ModelConfig model;
  TrainConfig train;
  double attack_epsilon = 0.5;

  /// Throws ConfigError for unknown keys and unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Applies "key=value".
  void set(const std::string& assignment);
  /// All keys in a fixed order, one "key = value" per line.
  std::string to_text() const;
  /// The generation keys only, in the same format.
  std::string gen_text() const;

  GenSpec gen_spec() const;
  /// The model for `data`: shapes from the dataset, the rest from this config.
  ModelConfig model_for(const Dataset& data) const;
  std::array<double, 3> split_fractions() const;
  Experiment experiment_for(const Dataset& data) const;

  static std::vector<std::string> keys();
};

/// Lines are "key = value"; blank lines and lines starting with '#' are skipped.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace gat
