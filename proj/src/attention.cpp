#include "gat/attention.hpp"

#include <cmath>

#include "gat/error.hpp"
#include "gat/ops.hpp"

namespace gat {

namespace {

Tensor xavier(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out, Shape shape) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

// [D x D] matrix assembled from M independently initialized [D x D_M] blocks.
Tensor head_projection(std::mt19937_64& rng, std::size_t width, std::size_t heads) {
  const std::size_t hw = width / heads;
  std::vector<double> values(width * width);
  const double bound = std::sqrt(6.0 / static_cast<double>(width + hw));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t m = 0; m < heads; ++m) {
    for (std::size_t r = 0; r < width; ++r) {
      for (std::size_t c = 0; c < hw; ++c) values[r * width + m * hw + c] = dist(rng);
    }
  }
  return Tensor({width, width}, std::move(values), true);
}

Tensor ones(std::size_t n) {
  Tensor t = Tensor::filled({n}, 1.0);
  t.set_requires_grad(true);
  return t;
}

// softmax(Q K^T / sqrt(D_M)) for batched heads.
Tensor attention_map(const Tensor& q, const Tensor& k) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  return softmax_rows(scale(matmul(q, transpose(k)), inv));
}

}  // namespace

void AttentionConfig::validate() const {
  if (frames == 0) throw ConfigError("attention: T must be positive");
  if (heads == 0 || width == 0 || width % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (experts.empty()) throw ConfigError("attention: expert list is empty");
  if (experts.front() != kGlobalWindow) throw ConfigError("attention: first expert must be global");
  for (auto w : experts) {
    if (w != kGlobalWindow && w > frames) {
      throw ConfigError("attention: window " + std::to_string(w) + " exceeds T = " +
                        std::to_string(frames));
    }
  }
  if (ffn_multiplier == 0) throw ConfigError("attention: feed-forward multiplier must be positive");
}

SABlockParams SABlockParams::init(const AttentionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.width, inner = cfg.ffn_multiplier * cfg.width;
  SABlockParams p;
  p.query = head_projection(rng, d, cfg.heads);
  p.key = head_projection(rng, d, cfg.heads);
  p.value = head_projection(rng, d, cfg.heads);
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
    p.expert_out.push_back(xavier(rng, d, d, {d, d}));
    // A lone expert is never gated, so it gets no gate weights.
    if (cfg.experts.size() > 1) p.expert_gate.push_back(xavier(rng, d, d, {d, d}));
  }
  p.ln1_gamma = ones(d);
  p.ln1_beta = Tensor::zeros({d}, true);
  p.ffn_w1 = xavier(rng, d, inner, {d, inner});
  p.ffn_b1 = Tensor::zeros({inner}, true);
  p.ffn_w2 = xavier(rng, inner, d, {inner, d});
  p.ffn_b2 = Tensor::zeros({d}, true);
  p.ln2_gamma = ones(d);
  p.ln2_beta = Tensor::zeros({d}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> SABlockParams::named(const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor*>> out = {
      {prefix + "query", &query}, {prefix + "key", &key}, {prefix + "value", &value}};
  for (std::size_t e = 0; e < expert_out.size(); ++e) {
    out.emplace_back(prefix + "expert" + std::to_string(e) + ".out", &expert_out[e]);
    if (e < expert_gate.size()) out.emplace_back(prefix + "expert" + std::to_string(e) + ".gate", &expert_gate[e]);
  }
  out.insert(out.end(), {{prefix + "ln1.gamma", &ln1_gamma},
                         {prefix + "ln1.beta", &ln1_beta},
                         {prefix + "ffn.w1", &ffn_w1},
                         {prefix + "ffn.b1", &ffn_b1},
                         {prefix + "ffn.w2", &ffn_w2},
                         {prefix + "ffn.b2", &ffn_b2},
                         {prefix + "ln2.gamma", &ln2_gamma},
                         {prefix + "ln2.beta", &ln2_beta}});
  return out;
}

HeadProjections project_heads(const Tensor& x, const SABlockParams& params,
                              const AttentionConfig& cfg) {
  if (x.rank() != 2 || x.dim(0) != cfg.frames || x.dim(1) != cfg.width) {
    throw DimensionError("attention input " + to_string(x.shape()) + " does not match T = " +
                         std::to_string(cfg.frames) + ", D = " + std::to_string(cfg.width));
  }
  return {split_heads(matmul(x, params.query), cfg.heads),
          split_heads(matmul(x, params.key), cfg.heads),
          split_heads(matmul(x, params.value), cfg.heads)};
}

GlobalAttention global_heads(const HeadProjections& proj) {
  Tensor maps = attention_map(proj.query, proj.key);
  return {matmul(maps, proj.value), maps};
}

GlobalAttention global_heads(const Tensor& x, const SABlockParams& params, const AttentionConfig& cfg) {
  return global_heads(project_heads(x, params, cfg));
}

LocalAttention local_heads(const HeadProjections& proj, std::size_t window) {
  const std::size_t frames = proj.query.dim(1);
  if (window == 0 || window > frames) {
    throw DimensionError("local_heads: window " + std::to_string(window) + " outside [1, " +
                         std::to_string(frames) + "]");
  }
  LocalAttention out;
  std::vector<Tensor> segments;
  for (std::size_t start = 0; start < frames; start += window) {
    const std::size_t len = std::min(window, frames - start);
    Tensor q = slice_rows(proj.query, start, len);
    Tensor k = slice_rows(proj.key, start, len);
    Tensor v = slice_rows(proj.value, start, len);
    Tensor map = attention_map(q, k);
    segments.push_back(matmul(map, v));
    out.segment_maps.push_back(std::move(map));
  }
  out.outputs = segments.size() == 1 ? segments.front() : concat_rows(segments);
  return out;
}

LocalAttention local_heads(const Tensor& x, std::size_t window, const SABlockParams& params,
                           const AttentionConfig& cfg) {
  return local_heads(project_heads(x, params, cfg), window);
}

GateResult gate_and_mix(std::span<const Tensor> expert_head_outputs, const SABlockParams& params) {
  const std::size_t experts = expert_head_outputs.size();
  if (experts < 2) throw ConfigError("gate_and_mix: needs at least 2 experts, got " + std::to_string(experts));
  if (params.expert_out.size() < experts || params.expert_gate.size() < experts) {
    throw ConfigError("gate_and_mix: parameters cover fewer experts than supplied");
  }
  std::vector<Tensor> values, relevances;
  for (std::size_t e = 0; e < experts; ++e) {
    if (expert_head_outputs[e].shape() != expert_head_outputs[0].shape()) {
      throw DimensionError("gate_and_mix: expert outputs differ in shape: " +
                           to_string(expert_head_outputs[0].shape()) + " vs " +
                           to_string(expert_head_outputs[e].shape()));
    }
    Tensor merged = merge_heads(expert_head_outputs[e]);
    values.push_back(matmul(merged, params.expert_out[e]));
    relevances.push_back(matmul(merged, params.expert_gate[e]));
  }
  Tensor weights = softmax_leading(stack(relevances));
  Tensor mixed = mul(select(weights, 0), values[0]);
  for (std::size_t e = 1; e < experts; ++e) mixed = add(mixed, mul(select(weights, e), values[e]));
  return {mixed, weights};
}

BlockOutput sa_block(const Tensor& x, const SABlockParams& params, const AttentionConfig& cfg,
                     BlockMode mode) {
  HeadProjections proj = project_heads(x, params, cfg);
  GlobalAttention global = global_heads(proj);

  BlockOutput out;
  out.record.head_maps = global.maps;
  out.record.mean_map = mean_leading(global.maps);

  Tensor attended;
  if (mode == BlockMode::kSA) {
    out.record.windows = {kGlobalWindow};
    out.record.local_maps.emplace_back();
    attended = matmul(merge_heads(global.outputs), params.expert_out.at(0));
  } else {
    if (cfg.experts.size() < 2) throw ConfigError("GMSA block requires at least 2 experts");
    std::vector<Tensor> expert_outputs;
    for (std::size_t window : cfg.experts) {
      out.record.windows.push_back(window);
      if (window == kGlobalWindow) {
        expert_outputs.push_back(global.outputs);
        out.record.local_maps.emplace_back();
      } else {
        LocalAttention local = local_heads(proj, window);
        expert_outputs.push_back(local.outputs);
        out.record.local_maps.push_back(std::move(local.segment_maps));
      }
    }
    GateResult gate = gate_and_mix(expert_outputs, params);
    attended = gate.mixed;
    out.record.gate_weights = gate.weights;
  }

  Tensor h = layer_norm(add(x, attended), params.ln1_gamma, params.ln1_beta);
  Tensor ff = add_bias(matmul(relu(add_bias(matmul(h, params.ffn_w1), params.ffn_b1)), params.ffn_w2),
                       params.ffn_b2);
  out.output = layer_norm(add(h, ff), params.ln2_gamma, params.ln2_beta);
  return out;
}

}  // namespace gat
