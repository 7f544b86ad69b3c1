#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gat/tensor.hpp"

namespace gat {

/// Expert window value meaning "attend over the whole sequence".
inline constexpr std::size_t kGlobalWindow = 0;

struct AttentionConfig {
  std::size_t frames = 0;  // T
  std::size_t width = 0;   // D
  std::size_t heads = 1;   // M
  /// One entry per expert: kGlobalWindow, or a segment length T_N in [1, T].
  std::vector<std::size_t> experts{kGlobalWindow};
  std::size_t ffn_multiplier = 4;

  std::size_t head_width() const { return width / heads; }
  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
};

/// SA uses the first (global) expert only; GMSA gates every expert.
enum class BlockMode { kSA, kGMSA };

/// Learnable tensors of one encoder block.
///
/// The query/key/value projections are stored as [D x D] matrices whose column
/// block [m*D_M, (m+1)*D_M) is head m's [D x D_M] projection. All experts share
/// them; each expert owns an output projection and a gating projection.
struct SABlockParams {
  Tensor query, key, value;
  std::vector<Tensor> expert_out;
  std::vector<Tensor> expert_gate;  // empty when there is a single expert
  Tensor ln1_gamma, ln1_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gamma, ln2_beta;

  static SABlockParams init(const AttentionConfig& cfg, std::mt19937_64& rng);
  /// Stable (name, tensor) enumeration; names are prefixed with `prefix`.
  std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix);
};

/// Per-head projections, each [M x T x D_M].
struct HeadProjections {
  Tensor query, key, value;
};

HeadProjections project_heads(const Tensor& x, const SABlockParams& params,
                              const AttentionConfig& cfg);

struct GlobalAttention {
  Tensor outputs;  // O_g, [M x T x D_M]
  Tensor maps;     // A_m, [M x T x T]
};

struct LocalAttention {
  Tensor outputs;                    // O_l, [M x T x D_M]
  std::vector<Tensor> segment_maps;  // one [M x len x len] map per segment
};

/// Scaled dot-product attention over all T frames, per head.
GlobalAttention global_heads(const HeadProjections& proj);
GlobalAttention global_heads(const Tensor& x, const SABlockParams& params, const AttentionConfig& cfg);

/// Attention restricted to consecutive segments of `window` frames. When the
/// window does not divide T the last segment is shorter.
LocalAttention local_heads(const HeadProjections& proj, std::size_t window);
LocalAttention local_heads(const Tensor& x, std::size_t window, const SABlockParams& params,
                           const AttentionConfig& cfg);

struct GateResult {
  Tensor mixed;    // Y, [T x D]
  Tensor weights;  // softmax over experts, [E x T x D]
};

/// Per expert e: Y_e = concat(heads) W_out[e], relevance R_e = concat(heads) W_gate[e].
/// The relevances are normalized across experts at every (t, d) and
/// Y = sum_e R_e * Y_e.
GateResult gate_and_mix(std::span<const Tensor> expert_head_outputs, const SABlockParams& params);

/// Attention maps produced by one block for one input.
struct AttentionRecord {
  Tensor head_maps;  // per-head global maps, [M x T x T]
  Tensor mean_map;   // head-averaged global map A, [T x T]
  std::vector<std::size_t> windows;              // window per expert
  std::vector<std::vector<Tensor>> local_maps;   // per expert, per segment; empty for global experts
  std::optional<Tensor> gate_weights;            // GMSA only, [E x T x D]
};

struct BlockOutput {
  Tensor output;  // [T x D]
  AttentionRecord record;
};

/// Attention (SA or gated multi-level) followed by residual + layer norm,
/// position-wise ReLU feed-forward, residual + layer norm.
BlockOutput sa_block(const Tensor& x, const SABlockParams& params, const AttentionConfig& cfg,
                     BlockMode mode);

}  // namespace gat
