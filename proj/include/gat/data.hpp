#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gat/adversarial.hpp"
#include "gat/tensor.hpp"

namespace gat {

enum class MotifKind { kGlobalMean, kLocalBurst };

std::string to_string(MotifKind kind);

struct GenSpec {
  std::size_t count = 1000;
  std::size_t frames = 40;
  std::size_t video_dim = 16;
  std::size_t audio_dim = 8;
  std::size_t classes = 8;
  std::size_t min_labels = 1;
  std::size_t max_labels = 3;
  /// Per-class motif kinds; empty means alternate global, local, global, ...
  std::vector<MotifKind> kinds;
  double strength = 3.0;  // norm of each class direction
  double noise = 1.0;     // per-coordinate standard deviation
  /// Frames per local burst; 0 means max(1, T / 8).
  std::size_t burst_length = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<MotifKind> resolved_kinds() const;
  std::size_t resolved_burst_length() const;
};

struct Example {
  std::size_t id = 0;
  Tensor video;                     // [T x D_v]
  Tensor audio;                     // [T x D_a]
  std::vector<std::size_t> labels;  // sorted, non-empty
};

struct Dataset {
  std::size_t frames = 0;
  std::size_t video_dim = 0;
  std::size_t audio_dim = 0;
  std::size_t classes = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  /// Throws DataError when any example disagrees with the header fields.
  void validate() const;
};

/// Unit-norm class directions in video and audio space, scaled by strength.
struct MotifDirections {
  std::vector<std::vector<double>> video;  // K x D_v
  std::vector<std::vector<double>> audio;  // K x D_a
};

MotifDirections motif_directions(const GenSpec& spec);

Dataset generate(const GenSpec& spec);

inline constexpr int kDatasetVersion = 1;

struct ReadOptions {
  /// Zero-pad short clips and truncate long ones to the header's T instead of
  /// rejecting them.
  bool fit_frames = false;
};

void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path, const ReadOptions& options = {});

/// Rows [0, T) of x, zero-padded when x is shorter.
Tensor fit_frames(const Tensor& x, std::size_t frames);

struct Splits {
  Dataset train, val, test;
};

/// Seeded shuffle, then contiguous train/val/test blocks.
Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

/// Copy of `data` holding only the examples at `indices`, in that order.
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

/// Multi-hot targets and feature tensors for the chosen examples.
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace gat
