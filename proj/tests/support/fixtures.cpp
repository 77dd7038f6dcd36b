#include "fixtures.hpp"

#include <random>

#include "oracles.hpp"

namespace clp::fixture {

ModelGraph small_cnn(std::uint64_t seed, std::size_t classes) {
  std::vector<Layer> layers;
  layers.push_back({Conv{Tensor({4, 2, 3, 3}), Tensor({4}), 1, 1}, std::nullopt});
  layers.push_back({BatchNorm{Tensor({4}, 1.0f), Tensor({4}), Tensor({4}), Tensor({4}, 1.0f)}, std::nullopt});
  layers.push_back({Relu{}, std::nullopt});
  layers.push_back({Conv{Tensor({5, 4, 3, 3}), Tensor({5}), 2, 1}, std::nullopt});
  layers.push_back({BatchNorm{Tensor({5}, 1.0f), Tensor({5}), Tensor({5}), Tensor({5}, 1.0f)}, std::nullopt});
  layers.push_back({Relu{}, std::nullopt});
  layers.push_back({AvgPool{3, 3}, std::nullopt});
  layers.push_back({Flatten{}, std::nullopt});
  layers.push_back({Linear{Tensor({classes, 5}), Tensor({classes})}, std::nullopt});
  ModelGraph m({2, 6, 6}, classes, std::move(layers));
  randomize(m, seed);
  return m;
}

void randomize(ModelGraph& model, std::uint64_t seed, float scale) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> dist(-scale, scale);
  std::uniform_real_distribution<float> var(0.5f, 1.5f);
  for (std::size_t i = 0; i < model.size(); ++i) {
    Layer& l = model.mutable_layer(i);
    if (auto* c = std::get_if<Conv>(&l.op)) {
      for (auto& v : c->weight.data()) v = dist(gen);
      for (auto& v : c->bias.data()) v = dist(gen);
    } else if (auto* b = std::get_if<BatchNorm>(&l.op)) {
      for (auto& v : b->gamma.data()) v = 1.0f + dist(gen);
      for (auto& v : b->beta.data()) v = dist(gen);
      for (auto& v : b->running_mean.data()) v = dist(gen);
      for (auto& v : b->running_var.data()) v = var(gen);
    } else if (auto* lin = std::get_if<Linear>(&l.op)) {
      for (auto& v : lin->weight.data()) v = dist(gen);
      for (auto& v : lin->bias.data()) v = dist(gen);
    }
  }
}

Dataset random_dataset(const Shape& image_shape, std::size_t n, std::size_t classes, std::uint64_t seed) {
  Shape s{n};
  s.insert(s.end(), image_shape.begin(), image_shape.end());
  Dataset d;
  d.images = oracle::random_tensor(s, seed, 0.0f, 1.0f);
  d.classes = classes;
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(i % classes));
  return d;
}

}  // namespace clp::fixture
