#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "clp/tensor.hpp"

namespace clp {

struct Conv {
  Tensor weight;  // (K, C, kh, kw)
  Tensor bias;    // (K)
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-5f;

  std::size_t channels() const { return gamma.dim(0); }
};

struct Relu {};

struct MaxPool {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct AvgPool {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct Flatten {};

struct Linear {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
};

// Adds the output of an earlier layer to this layer's input.
struct ResidualAdd {
  std::size_t source = 0;
};

using LayerOp = std::variant<Conv, BatchNorm, Relu, MaxPool, AvgPool, Linear, ResidualAdd, Flatten>;

struct Layer {
  LayerOp op;
  // Index of the layer whose output feeds this one. Unset means the previous
  // layer, or the model input for layer 0. Used for projection shortcuts.
  std::optional<std::size_t> input;

  template <typename T>
  bool is() const noexcept {
    return std::holds_alternative<T>(op);
  }
  template <typename T>
  T& as() {
    return std::get<T>(op);
  }
  template <typename T>
  const T& as() const {
    return std::get<T>(op);
  }
};

std::string layer_kind_name(const Layer& layer);

/// The network: an ordered layer list over (C,H,W) inputs producing
/// `class_count()` logits per sample.
///
/// Construction validates the whole graph: channel counts chain, residual and
/// input references point backwards with matching shapes, batch-norm
/// parameters are consistent (running_var >= 0, epsilon > 0), and the last
/// layer produces a vector of length class_count().
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(Shape input_shape, std::size_t class_count, std::vector<Layer> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t class_count() const noexcept { return class_count_; }
  std::size_t size() const noexcept { return layers_.size(); }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  // Mutable access to parameters. Callers must not change tensor shapes;
  // use `validate()` after structural edits.
  Layer& mutable_layer(std::size_t i) { return layers_.at(i); }

  // Per-sample output shape of each layer.
  const std::vector<Shape>& output_shapes() const noexcept { return shapes_; }

  // Index of the layer that feeds layer `i` (nullopt = model input).
  std::optional<std::size_t> input_of(std::size_t i) const;

  std::vector<std::size_t> conv_layers() const;
  std::size_t parameter_count() const;

  void validate();

  friend bool operator==(const ModelGraph& a, const ModelGraph& b);

 private:
  Shape input_shape_;
  std::size_t class_count_ = 0;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
};

using Probe = std::pair<std::size_t, std::size_t>;  // (layer, channel)

// Feature maps captured at probed conv channels: (N, H, W) per probe.
struct ActivationTrace {
  std::map<Probe, Tensor> maps;

  const Tensor& at(std::size_t layer, std::size_t channel) const;
};

Tensor forward(const ModelGraph& model, const Tensor& batch);

// Same logits as forward(), bit for bit, plus the probed channel outputs.
std::pair<Tensor, ActivationTrace> forward_traced(const ModelGraph& model, const Tensor& batch,
                                                  const std::set<Probe>& probes);

// Folds every batchnorm into the conv right before it. Index references are
// remapped to the shortened layer list.
ModelGraph fuse_conv_bn(const ModelGraph& model);

bool has_batchnorm(const ModelGraph& model);

}  // namespace clp
