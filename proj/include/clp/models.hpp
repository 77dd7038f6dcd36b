#pragma once

#include <cstddef>
#include <cstdint>

#include "clp/model_graph.hpp"

namespace clp {

// conv(16)-BN-ReLU, conv(32,/2)-BN-ReLU, one residual block of width 32,
// conv(64,/2)-BN-ReLU, global average pool, linear. Input H and W must be
// multiples of 4.
ModelGraph make_tinynet(const Shape& input_shape, std::size_t classes, std::uint64_t seed);

// CIFAR-style ResNet-18 (3x3 stem, four stages of two basic blocks, 1x1
// projection shortcuts). Input H and W must be multiples of 8.
ModelGraph make_resnet18(const Shape& input_shape, std::size_t classes, std::uint64_t seed);

}  // namespace clp
