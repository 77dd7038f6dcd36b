#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>

#include "clp/errors.hpp"
#include "clp/eval.hpp"
#include "clp/models.hpp"
#include "clp/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace clp;

namespace {

Layer layer(LayerOp op, std::optional<std::size_t> input = std::nullopt) { return {std::move(op), input}; }

// Analytic parameter gradients against central differences of the
// double-precision reference network. Tensors larger than `max_per_tensor`
// are checked at that many seeded random indices.
void expect_gradients_match(const ModelGraph& m, const Tensor& x, const std::vector<int>& y,
                            std::size_t max_per_tensor = SIZE_MAX) {
  Gradients g = backward(m, x, y);
  oracle::ReferenceNet ref(m);
  EXPECT_NEAR(g.loss, ref.loss(x, y), 1e-5);
  std::size_t checked = 0;
  for (std::size_t l = 0; l < m.size(); ++l) {
    auto params = trainable_parameters(m.layer(l));
    ASSERT_EQ(g.grads[l].size(), params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      ASSERT_EQ(g.grads[l][k].shape(), params[k]->shape());
      for (std::size_t i : oracle::sample_indices(params[k]->size(), max_per_tensor, l * 31 + k)) {
        const double fd = ref.numeric_grad(x, y, l, k, i);
        EXPECT_NEAR(g.grads[l][k][i], fd, 1e-3 * std::abs(fd) + 1e-5)
            << layer_kind_name(m.layer(l)) << " layer " << l << " param " << k << " index " << i;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 0u);
}

}  // namespace

TEST(CrossEntropy, UniformLogits) {
  Tensor logits({2, 10}, 0.3f);
  std::vector<int> y{3, 9};
  EXPECT_NEAR(cross_entropy(logits, y).loss, std::log(10.0), 1e-6);
}

TEST(CrossEntropy, HugeMarginIsNearZero) {
  Tensor logits({1, 3}, std::vector<float>{100.0f, 0.0f, 0.0f});
  std::vector<int> y{0};
  auto r = cross_entropy(logits, y);
  EXPECT_LT(r.loss, 1e-12);
  for (float v : r.grad.data()) EXPECT_LT(std::abs(v), 1e-12f);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Tensor logits = oracle::random_tensor({3, 5}, 1, -2.0f, 2.0f);
  std::vector<int> y{4, 0, 2};
  auto r = cross_entropy(logits, y);
  auto loss_at = [&](std::size_t i, double delta) {
    double total = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
      double z = 0.0, mine = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double v = logits[s * 5 + j] + (s * 5 + j == i ? delta : 0.0);
        z += std::exp(v);
        if (static_cast<int>(j) == y[s]) mine = v;
      }
      total += std::log(z) - mine;
    }
    return total / 3.0;
  };
  for (std::size_t i = 0; i < 15; ++i) {
    const double fd = (loss_at(i, 1e-6) - loss_at(i, -1e-6)) / 2e-6;
    EXPECT_NEAR(r.grad[i], fd, 1e-3 * std::abs(fd) + 1e-5) << i;
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  std::vector<int> y{3};
  EXPECT_THROW(cross_entropy(Tensor({1, 3}), y), IndexError);
}

TEST(Backward, SingleLinearClosedForm) {
  Tensor w = oracle::random_tensor({3, 4}, 1);
  ModelGraph m({4, 1, 1}, 3, {layer(Flatten{}), layer(Linear{w, Tensor({3})})});
  Tensor x = oracle::random_tensor({5, 4, 1, 1}, 2);
  std::vector<int> y{0, 1, 2, 1, 0};
  Gradients g = backward(m, x, y);
  Tensor logits = forward(m, x);
  Tensor d = cross_entropy(logits, y).grad;
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 4; ++i) {
      double ref = 0.0;
      for (std::size_t s = 0; s < 5; ++s) ref += static_cast<double>(d[s * 3 + o]) * x[s * 4 + i];
      EXPECT_NEAR(g.grads[1][0][o * 4 + i], ref, 1e-6);
    }
}

TEST(Backward, ZeroLossPointHasZeroGradients) {
  Tensor b({2}, std::vector<float>{1000.0f, -1000.0f});
  ModelGraph m({2, 1, 1}, 2, {layer(Flatten{}), layer(Linear{Tensor({2, 2}), b})});
  std::vector<int> y{0, 0};
  Gradients g = backward(m, oracle::random_tensor({2, 2, 1, 1}, 1), y);
  for (const auto& per_layer : g.grads)
    for (const auto& t : per_layer)
      for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(GradientCheck, ConvReluMaxPoolLinear) {
  ModelGraph m({2, 6, 6}, 3,
               {layer(Conv{oracle::random_tensor({3, 2, 3, 3}, 1, -0.5f, 0.5f), oracle::random_tensor({3}, 2), 1, 1}),
                layer(Relu{}), layer(MaxPool{2, 2}),
                layer(Conv{oracle::random_tensor({4, 3, 3, 3}, 3, -0.5f, 0.5f), oracle::random_tensor({4}, 4), 2, 1}),
                layer(Flatten{}), layer(Linear{oracle::random_tensor({3, 16}, 5, -0.5f, 0.5f), oracle::random_tensor({3}, 6)})});
  Tensor x = oracle::random_tensor({3, 2, 6, 6}, 7);
  expect_gradients_match(m, x, {0, 2, 1});
}

TEST(GradientCheck, BatchnormAvgPool) {
  ModelGraph m = fixture::small_cnn(11);
  Tensor x = oracle::random_tensor({4, 2, 6, 6}, 12);
  expect_gradients_match(m, x, {0, 1, 2, 1});
}

TEST(GradientCheck, ResidualAndProjectionPaths) {
  // conv -> relu -> [conv -> bn] + [1x1 conv from the relu output] -> relu -> avgpool -> linear
  ModelGraph m({2, 4, 4}, 2,
               {layer(Conv{oracle::random_tensor({3, 2, 3, 3}, 1, -0.5f, 0.5f), oracle::random_tensor({3}, 2), 1, 1}),
                layer(Relu{}),
                layer(Conv{oracle::random_tensor({3, 3, 3, 3}, 3, -0.5f, 0.5f), oracle::random_tensor({3}, 4), 2, 1}),
                layer(BatchNorm{Tensor({3}, 1.2f), Tensor({3}, 0.1f), Tensor({3}), Tensor({3}, 1.0f)}),
                layer(Conv{oracle::random_tensor({3, 3, 1, 1}, 5, -0.5f, 0.5f), oracle::random_tensor({3}, 6), 2, 0}, 1),
                layer(ResidualAdd{3}), layer(Relu{}), layer(AvgPool{2, 2}), layer(Flatten{}),
                layer(Linear{oracle::random_tensor({2, 3}, 7), oracle::random_tensor({2}, 8)})});
  Tensor x = oracle::random_tensor({3, 2, 4, 4}, 9);
  expect_gradients_match(m, x, {1, 0, 1});
}

TEST(GradientCheck, TinyNetLayout) {
  ModelGraph m = make_tinynet({3, 8, 8}, 3, 5);
  Tensor x = oracle::random_tensor({4, 3, 8, 8}, 10, 0.0f, 1.0f);
  expect_gradients_match(m, x, {2, 0, 1, 1}, 24);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  ModelGraph m = fixture::small_cnn(1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(train(m, fixture::random_dataset({2, 6, 6}, 8, 3, 1), cfg), m);
}

TEST(Train, EmptyDatasetIsConfigError) {
  Dataset empty;
  empty.classes = 3;
  EXPECT_THROW(train(fixture::small_cnn(1), empty, TrainConfig{}), ConfigError);
}

TEST(Train, InvalidConfig) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.momentum = 1.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, CosineSchedule) {
  TrainConfig cfg;
  cfg.epochs = 4;
  EXPECT_FLOAT_EQ(cfg.rate_for_epoch(0), 0.1f);
  EXPECT_FLOAT_EQ(cfg.rate_for_epoch(2), 0.05f);
  cfg.schedule = Schedule::Constant;
  EXPECT_FLOAT_EQ(cfg.rate_for_epoch(3), 0.1f);
}

namespace {

// Two Gaussian blobs in a 2-pixel image, far apart.
Dataset separable(std::size_t n) {
  Dataset d = fixture::random_dataset({2, 1, 1}, n, 2, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const float shift = d.labels[i] == 0 ? 0.0f : 0.6f;
    d.images[i * 2] = 0.2f * d.images[i * 2] + shift;
    d.images[i * 2 + 1] = 0.2f * d.images[i * 2 + 1] + shift;
  }
  return d;
}

ModelGraph logistic() {
  return ModelGraph({2, 1, 1}, 2, {{Flatten{}, std::nullopt},
                                   {Linear{oracle::random_tensor({2, 2}, 4, -0.1f, 0.1f), Tensor({2})}, std::nullopt}});
}

}  // namespace

TEST(Train, SeparableToyReachesHighAccuracy) {
  Dataset d = separable(200);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  std::vector<double> losses;
  ModelGraph m = train(logistic(), d, cfg, [&](const EpochStats& s) { losses.push_back(s.mean_loss); });
  EXPECT_GE(accuracy(m, d), 0.99);
  ASSERT_EQ(losses.size(), 20u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(losses[e], losses[e - 1]) << e;
}

TEST(Train, BitwiseReproducible) {
  Dataset d = fixture::random_dataset({2, 6, 6}, 40, 3, 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 9;
  ModelGraph a = train(fixture::small_cnn(2), d, cfg);
  ModelGraph b = train(fixture::small_cnn(2), d, cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 10;
  EXPECT_FALSE(train(fixture::small_cnn(2), d, cfg) == a);
}

TEST(Train, BatchnormRunningStatsMove) {
  Dataset d = fixture::random_dataset({2, 6, 6}, 32, 3, 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  ModelGraph m = fixture::small_cnn(3);
  auto& bn = m.mutable_layer(1).as<BatchNorm>();
  bn.running_mean.fill(0.0f);
  bn.running_var.fill(1.0f);
  // One batch: running = 0.9 * old + 0.1 * batch (unbiased variance).
  Gradients g = backward(m, d.images, d.labels);
  ModelGraph t = train(m, d, cfg);
  const auto& after = t.layer(1).as<BatchNorm>();
  const double count = 32.0 * 36.0;
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(after.running_mean[c], 0.1 * g.batch_mean[1][c], 1e-6);
    EXPECT_NEAR(after.running_var[c], 0.9 + 0.1 * g.batch_var[1][c] * count / (count - 1.0), 1e-5);
  }
}
