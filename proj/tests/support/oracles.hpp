#pragma once

// Independent reference implementations used only by tests. None of these
// share code with the library kernels.

#include <cstdint>
#include <span>
#include <vector>

#include "clp/model_graph.hpp"
#include "clp/tensor.hpp"

namespace clp::oracle {

// Singular values in descending order, one-sided Jacobi in double precision.
std::vector<double> singular_values(const Matrix& m);

// Seven nested loops, double accumulation.
Tensor direct_conv(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                   std::size_t padding);

// Random uniform matrix/tensor in [lo, hi).
Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, float lo = -1.0f,
                     float hi = 1.0f);
Tensor random_tensor(const Shape& shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f);

// All of 0..n-1 if n <= max, else `max` distinct indices drawn with a seeded
// generator, ascending.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t max, std::uint64_t seed);

// Double-precision copy of a model used as a finite-difference oracle.
// Batchnorm runs in training mode (batch statistics, biased variance), the
// same semantics as clp::backward.
class ReferenceNet {
 public:
  explicit ReferenceNet(const ModelGraph& model);

  // Parameters in the order of clp::trainable_parameters(layer).
  std::vector<std::vector<double>>& params(std::size_t layer) { return params_[layer]; }

  double loss(const Tensor& batch, std::span<const int> labels) const;

  // Central difference of loss() with respect to params(layer)[k][i].
  double numeric_grad(const Tensor& batch, std::span<const int> labels, std::size_t layer,
                      std::size_t k, std::size_t i, double h = 1e-6);

 private:
  const ModelGraph* model_;
  std::vector<std::vector<std::vector<double>>> params_;
};

}  // namespace clp::oracle
