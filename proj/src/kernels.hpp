#pragma once

// Internal kernels shared by inference and training.

#include <cstddef>

#include "clp/model_graph.hpp"
#include "clp/tensor.hpp"

namespace clp::detail {

// gemm() without internal threading, for callers already running in parallel.
void gemm_serial(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
                 float* c);

Tensor conv_forward(const Tensor& input, const Conv& conv);
Tensor batchnorm_inference(const Tensor& input, const BatchNorm& bn);
Tensor flatten(const Tensor& input);
Tensor add(const Tensor& a, const Tensor& b);

}  // namespace clp::detail
