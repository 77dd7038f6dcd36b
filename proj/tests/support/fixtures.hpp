#pragma once

// Small models and datasets shared by the unit tests.

#include <cstdint>

#include "clp/backdoor.hpp"
#include "clp/model_graph.hpp"

namespace clp::fixture {

// conv(3x3,p1)-BN-ReLU-conv(3x3,s2,p1)-BN-ReLU-avgpool-flatten-linear on
// (2,6,6) inputs, random BN statistics so fusion is non-trivial.
ModelGraph small_cnn(std::uint64_t seed, std::size_t classes = 3);

// Fills every parameter of `model` with uniform noise in [-scale, scale];
// running variances are drawn in [0.5, 1.5].
void randomize(ModelGraph& model, std::uint64_t seed, float scale = 0.5f);

// Random images in [0,1] with labels cycling through `classes`.
Dataset random_dataset(const Shape& image_shape, std::size_t n, std::size_t classes, std::uint64_t seed);

}  // namespace clp::fixture
