#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "gat/error.hpp"
#include "gat/grad_check.hpp"
#include "gat/model.hpp"
#include "gat/ops.hpp"
#include "test_util.hpp"

namespace gat {
namespace {

using testing::random_tensor;

ModelConfig small_config(std::vector<std::size_t> experts = {kGlobalWindow, 2}) {
  ModelConfig c;
  c.frames = 4;
  c.video_dim = 8;
  c.audio_dim = 4;
  c.heads = 2;
  c.classes = 3;
  c.hidden = 6;
  c.experts = std::move(experts);
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gat_test_model_" + name);
}

TEST(PositionalEncoding, KnownEntries) {
  Tensor pe = positional_encoding(6, 8);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(pe.at(0, c), c % 2 == 0 ? 0.0 : 1.0);
  EXPECT_EQ(pe.at(1, 0), std::sin(1.0));
  EXPECT_EQ(pe.at(1, 1), std::cos(1.0));
  for (double v : pe.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(positional_encoding(4, 7), ConfigError);
}

TEST(ModelConfig, RejectsBadShapes) {
  ModelConfig c = small_config();
  c.video_dim = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config({kGlobalWindow, 9});
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, ForwardIsDeterministic) {
  GatParams p = GatParams::init(small_config(), 3);
  std::mt19937_64 rng(4);
  Tensor v = random_tensor(rng, {4, 8}), a = random_tensor(rng, {4, 4});
  Prediction first = forward(v, a, p), second = forward(v, a, p);
  EXPECT_EQ(first.probabilities, second.probabilities);
  ASSERT_EQ(first.probabilities.size(), 3u);
  for (double q : first.probabilities) {
    EXPECT_GT(q, 0.0);
    EXPECT_LT(q, 1.0);
  }
  ASSERT_EQ(first.video_records.size(), 1u);
  EXPECT_EQ(first.video_records[0].mean_map.shape(), (Shape{4, 4}));
}

TEST(Model, SameSeedSameParameters) {
  GatParams a = GatParams::init(small_config(), 9), b = GatParams::init(small_config(), 9);
  auto na = a.named_parameters();
  auto nb = b.named_parameters();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].first, nb[i].first);
    EXPECT_TRUE(std::equal(na[i].second->values().begin(), na[i].second->values().end(),
                           nb[i].second->values().begin()));
  }
}

TEST(Model, ZeroOutputLayerGivesHalf) {
  GatParams p = GatParams::init(small_config(), 5);
  for (auto& v : p.out_w.mutable_values()) v = 0.0;
  std::mt19937_64 rng(6);
  Prediction pred = forward(random_tensor(rng, {4, 8}), random_tensor(rng, {4, 4}), p);
  for (double q : pred.probabilities) EXPECT_EQ(q, 0.5);
}

TEST(Model, RowCountMismatchRejected) {
  GatParams p = GatParams::init(small_config(), 5);
  std::mt19937_64 rng(6);
  EXPECT_THROW(forward(random_tensor(rng, {4, 8}), random_tensor(rng, {3, 4}), p), DimensionError);
}

TEST(Model, ModalityEncodersAreSeparate) {
  // Equal widths so the inputs can be swapped at all.
  ModelConfig c = small_config();
  c.audio_dim = 8;
  GatParams p = GatParams::init(c, 11);
  std::mt19937_64 rng(12);
  Tensor x = random_tensor(rng, {4, 8}), y = random_tensor(rng, {4, 8});
  Prediction xy = forward(x, y, p), yx = forward(y, x, p);
  EXPECT_NE(xy.probabilities, yx.probabilities);
}

TEST(Model, BatchMatchesSingleExamples) {
  GatParams p = GatParams::init(small_config(), 13);
  std::mt19937_64 rng(14);
  std::vector<Tensor> vs, as;
  for (int i = 0; i < 3; ++i) {
    vs.push_back(random_tensor(rng, {4, 8}));
    as.push_back(random_tensor(rng, {4, 4}));
  }
  BatchOutput batch = forward_batch(p, vs, as);
  Tensor probs = sigmoid(batch.logits);
  for (std::size_t b = 0; b < 3; ++b) {
    Prediction single = forward(vs[b], as[b], p);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(probs.at(b, k), single.probabilities[k]);
  }
}

class ModelGradient : public ::testing::TestWithParam<std::vector<std::size_t>> {};

TEST_P(ModelGradient, FullModelMatchesFiniteDifferences) {
  GatParams p = GatParams::init(small_config(GetParam()), 21);
  std::mt19937_64 rng(22);
  std::vector<Tensor> vs, as;
  for (int i = 0; i < 2; ++i) {
    vs.push_back(random_tensor(rng, {4, 8}));
    as.push_back(random_tensor(rng, {4, 4}));
  }
  Tensor target({2, 3}, {1, 0, 1, 0, 1, 0});
  std::vector<Tensor> wrt;
  for (auto& [name, t] : p.named_parameters()) wrt.push_back(*t);
  wrt.push_back(vs[0]);
  GradCheckResult r = grad_check([&] { return bce_loss(forward_batch(p, vs, as).logits, target); }, wrt);
  EXPECT_LT(r.max_rel_error, 1e-4) << "tensor " << r.worst_tensor << " index " << r.worst_index;
}

INSTANTIATE_TEST_SUITE_P(Experts, ModelGradient,
                         ::testing::Values(std::vector<std::size_t>{kGlobalWindow},
                                           std::vector<std::size_t>{kGlobalWindow, 2},
                                           std::vector<std::size_t>{kGlobalWindow, 3, 1}));

TEST(Checkpoint, RoundTripIsBitExact) {
  GatParams p = GatParams::init(small_config({kGlobalWindow, 3, 1}), 31);
  const auto path = temp_path("roundtrip.bin");
  save_checkpoint(p, path);
  GatParams q = load_checkpoint(path);
  EXPECT_EQ(q.config, p.config);
  auto np = p.named_parameters();
  auto nq = q.named_parameters();
  ASSERT_EQ(np.size(), nq.size());
  for (std::size_t i = 0; i < np.size(); ++i) {
    EXPECT_EQ(np[i].first, nq[i].first);
    ASSERT_EQ(np[i].second->shape(), nq[i].second->shape());
    EXPECT_EQ(std::memcmp(np[i].second->values().data(), nq[i].second->values().data(),
                          np[i].second->size() * sizeof(double)),
              0)
        << np[i].first;
  }
  std::filesystem::remove(path);
}

CheckpointError::Kind load_error(const std::filesystem::path& path) {
  try {
    load_checkpoint(path);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return CheckpointError::Kind::kIo;
}

TEST(Checkpoint, DistinctErrors) {
  GatParams p = GatParams::init(small_config(), 32);
  const auto path = temp_path("corrupt.bin");
  save_checkpoint(p, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto rewrite = [&](const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
  };

  rewrite(bytes.substr(0, bytes.size() / 2));
  EXPECT_EQ(load_error(path), CheckpointError::Kind::kTruncated);

  std::string bad = bytes;
  bad[0] = 'X';
  rewrite(bad);
  EXPECT_EQ(load_error(path), CheckpointError::Kind::kBadMagic);

  bad = bytes;
  bad[8] = 7;  // version field follows the 8-byte magic
  rewrite(bad);
  EXPECT_EQ(load_error(path), CheckpointError::Kind::kVersion);

  rewrite(bytes + "x");
  EXPECT_EQ(load_error(path), CheckpointError::Kind::kInconsistent);

  // Stored class count changed without touching the tensors.
  bad = bytes;
  bad[12 + 4 * 8] = 5;
  rewrite(bad);
  EXPECT_EQ(load_error(path), CheckpointError::Kind::kInconsistent);

  std::filesystem::remove(path);
  EXPECT_EQ(load_error(path), CheckpointError::Kind::kIo);
}

}  // namespace
}  // namespace gat
