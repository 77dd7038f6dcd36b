#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clp/tensor.hpp"

namespace clp {

enum class Split { Train, Val, Test };

std::string to_string(Split split);

/// Labelled images. `images` is (N,C,H,W) with values in [0,1]; every label is
/// in [0, classes).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 0;
  Split split = Split::Train;

  std::size_t size() const noexcept { return labels.size(); }
  Shape image_shape() const;  // (C,H,W)

  void validate() const;

  // Samples at `indices`, in that order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

enum class TriggerKind { Patch, Blended };
enum class TargetRule { AllToOne, AllToAll };

/// How poisoned samples are made: the trigger δ(x), the relabeling rule and
/// the fraction of the training set that is poisoned.
struct PoisonSpec {
  TriggerKind trigger = TriggerKind::Patch;

  Tensor patch;  // (C, th, tw), pasted with its top-left corner at (patch_row, patch_col)
  std::size_t patch_row = 0;
  std::size_t patch_col = 0;

  Tensor blend_pattern;  // (C, H, W)
  float blend_alpha = 0.1f;

  TargetRule rule = TargetRule::AllToOne;
  int target = 0;  // all-to-one target class

  double rate = 0.1;
  std::uint64_t seed = 0;

  // Throws ConfigError if the trigger does not fit `image_shape` (C,H,W) or a
  // parameter is out of range.
  void validate(const Shape& image_shape) const;
};

// 3x3 (by default) checkerboard of 0/1 in the bottom-right corner.
PoisonSpec make_patch_spec(const Shape& image_shape, std::size_t size = 3);

// Seeded uniform-noise pattern blended with ratio `alpha`.
PoisonSpec make_blended_spec(const Shape& image_shape, float alpha = 0.1f,
                             std::uint64_t pattern_seed = 1234);

// x is (C,H,W). Output is clamped to [0,1].
Tensor apply_trigger(const Tensor& x, const PoisonSpec& spec);

// Applies the trigger to every image of an (N,C,H,W) batch.
Tensor apply_trigger_batch(const Tensor& images, const PoisonSpec& spec);

int target_label(int y, TargetRule rule, int target, std::size_t classes);

struct PoisonResult {
  Dataset data;
  std::vector<std::size_t> poisoned;  // ascending
};

// Triggers and relabels exactly round(rate * N) samples chosen by a seeded
// shuffle; the rest are copied untouched.
PoisonResult poison_dataset(const Dataset& d, const PoisonSpec& spec);

// Class-conditional colored shapes: the class picks the shape and base hue,
// each sample jitters position, scale, hue, and noise. Labels cycle through
// the classes so every prefix is balanced.
Dataset make_synthetic_dataset(std::size_t classes, std::size_t per_class, std::size_t size,
                               std::uint64_t seed, Split split = Split::Train,
                               std::size_t channels = 3);

// CIFAR-10 binary records: 1 label byte followed by 3072 pixel bytes (R, G,
// B planes of 32x32). `path` may be a single file or a directory holding
// data_batch_{1..5}.bin / test_batch.bin.
Dataset load_cifar_binary(const std::filesystem::path& path, Split split = Split::Train);
void write_cifar_binary(const Dataset& d, const std::filesystem::path& file);

}  // namespace clp
