#include "clp/models.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "clp/errors.hpp"
#include "clp/rng.hpp"

namespace clp {

namespace {

class Builder {
 public:
  explicit Builder(std::uint64_t seed) : rng_(seed) {}

  std::size_t conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                   std::size_t padding, std::optional<std::size_t> input = std::nullopt) {
    Tensor w({out, in, k, k});
    kaiming(w, in * k * k);
    layers_.push_back({Conv{std::move(w), Tensor({out}), stride, padding}, input});
    return layers_.size() - 1;
  }

  std::size_t batchnorm(std::size_t channels) {
    layers_.push_back({BatchNorm{Tensor({channels}, 1.0f), Tensor({channels}),
                                 Tensor({channels}), Tensor({channels}, 1.0f)},
                       std::nullopt});
    return layers_.size() - 1;
  }

  std::size_t push(LayerOp op) {
    layers_.push_back({std::move(op), std::nullopt});
    return layers_.size() - 1;
  }

  std::size_t linear(std::size_t in, std::size_t out) {
    Tensor w({out, in});
    kaiming(w, in);
    return push(Linear{std::move(w), Tensor({out})});
  }

  std::vector<Layer> take() { return std::move(layers_); }

 private:
  void kaiming(Tensor& w, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = static_cast<float>(rng_.uniform(-bound, bound));
  }

  Rng rng_;
  std::vector<Layer> layers_;
};

void check_input(const Shape& s, std::size_t multiple, const char* arch) {
  if (s.size() != 3 || s[0] == 0 || s[1] == 0 || s[2] == 0 || s[1] % multiple != 0 ||
      s[2] % multiple != 0) {
    throw ConfigError(std::string(arch) + " needs a (C,H,W) input with H and W multiples of " +
                      std::to_string(multiple) + ", got " + shape_to_string(s));
  }
}

}  // namespace

ModelGraph make_tinynet(const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  check_input(input_shape, 4, "tinynet");
  if (input_shape[1] != input_shape[2]) throw ConfigError("tinynet needs a square input");
  if (classes == 0) throw ConfigError("class count must be positive");
  Builder b(seed);
  b.conv(input_shape[0], 16, 3, 1, 1);
  b.batchnorm(16);
  b.push(Relu{});
  b.conv(16, 32, 3, 2, 1);
  b.batchnorm(32);
  const std::size_t block_in = b.push(Relu{});
  b.conv(32, 32, 3, 1, 1);
  b.batchnorm(32);
  b.push(Relu{});
  b.conv(32, 32, 3, 1, 1);
  b.batchnorm(32);
  b.push(ResidualAdd{block_in});
  b.push(Relu{});
  b.conv(32, 64, 3, 2, 1);
  b.batchnorm(64);
  b.push(Relu{});
  const std::size_t side = input_shape[1] / 4;
  b.push(AvgPool{side, side});
  b.push(Flatten{});
  b.linear(64, classes);
  return ModelGraph(input_shape, classes, b.take());
}

ModelGraph make_resnet18(const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  check_input(input_shape, 8, "resnet18");
  if (input_shape[1] != input_shape[2]) throw ConfigError("resnet18 needs a square input");
  if (classes == 0) throw ConfigError("class count must be positive");
  Builder b(seed);
  b.conv(input_shape[0], 64, 3, 1, 1);
  b.batchnorm(64);
  std::size_t prev = b.push(Relu{});
  std::size_t width = 64;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t out = 64u << stage;
    for (std::size_t block = 0; block < 2; ++block) {
      const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
      const std::size_t block_in = prev;
      b.conv(width, out, 3, stride, 1, block_in);
      b.batchnorm(out);
      b.push(Relu{});
      b.conv(out, out, 3, 1, 1);
      const std::size_t main_bn = b.batchnorm(out);
      if (stride != 1 || width != out) {
        // Projection shortcut reads the block input; the add pulls in the main path.
        b.conv(width, out, 1, stride, 0, block_in);
        b.batchnorm(out);
        b.push(ResidualAdd{main_bn});
      } else {
        b.push(ResidualAdd{block_in});
      }
      prev = b.push(Relu{});
      width = out;
    }
  }
  const std::size_t h = input_shape[1] / 8;
  b.push(AvgPool{h, h});
  b.push(Flatten{});
  b.linear(512, classes);
  return ModelGraph(input_shape, classes, b.take());
}

}  // namespace clp
