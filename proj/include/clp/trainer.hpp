#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "clp/backdoor.hpp"
#include "clp/model_graph.hpp"

namespace clp {

enum class Schedule { Cosine, Constant };

struct TrainConfig {
  float learning_rate = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  Schedule schedule = Schedule::Cosine;
  std::uint64_t seed = 0;

  void validate() const;
  float rate_for_epoch(std::size_t epoch) const;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, (N, C)
};

// Mean softmax cross-entropy; grad = (softmax - onehot) / N.
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);

// Trainable tensors of a layer in a fixed order: conv/linear (weight, bias),
// batchnorm (gamma, beta). Other kinds have none.
std::vector<Tensor*> trainable_parameters(Layer& layer);
std::vector<const Tensor*> trainable_parameters(const Layer& layer);

struct Gradients {
  double loss = 0.0;
  Tensor logits;
  // grads[layer][k] matches trainable_parameters(layer)[k].
  std::vector<std::vector<Tensor>> grads;
  // Batch statistics seen by each batchnorm layer (empty for other kinds).
  std::vector<Tensor> batch_mean;
  std::vector<Tensor> batch_var;  // biased
};

// Reverse-mode gradients of the mean cross-entropy. Batchnorm layers use
// the statistics of `batch` (training mode); the model is not modified.
Gradients backward(const ModelGraph& model, const Tensor& batch, std::span<const int> labels);

// Training-mode forward pass (batchnorm uses batch statistics).
Tensor forward_train(const ModelGraph& model, const Tensor& batch);

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // on the training batches, in training mode
  float learning_rate = 0.0f;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// SGD with momentum; weight decay is added to the gradient before the momentum
// update (PyTorch SGD semantics). Each epoch reshuffles with a seeded
// generator, so the result is deterministic for a given seed and config.
ModelGraph train(ModelGraph model, const Dataset& data, const TrainConfig& config,
                 const EpochCallback& on_epoch = nullptr);

// Running-statistic momentum for batchnorm layers during training.
inline constexpr float kBatchNormMomentum = 0.1f;

}  // namespace clp
