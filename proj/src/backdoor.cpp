#include "clp/backdoor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

#include "clp/errors.hpp"
#include "clp/rng.hpp"

namespace clp {

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

Shape Dataset::image_shape() const {
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void Dataset::validate() const {
  if (labels.empty()) throw ConfigError("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ConfigError("dataset images " + shape_to_string(images.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  if (classes < 2) throw ConfigError("dataset needs at least two classes");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ConfigError("empty subset");
  const std::size_t per = images.size() / images.dim(0);
  Shape s = images.shape();
  s[0] = indices.size();
  Dataset out;
  out.images = Tensor(s);
  out.labels.reserve(indices.size());
  out.classes = classes;
  out.split = split;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= labels.size()) throw IndexError("subset index out of range");
    std::copy_n(images.data().begin() + src * per, per, out.images.data().begin() + i * per);
    out.labels.push_back(labels[src]);
  }
  return out;
}

void PoisonSpec::validate(const Shape& image_shape) const {
  if (image_shape.size() != 3) throw ConfigError("image shape must be (C,H,W)");
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("poisoning rate must lie in [0,1]");
  if (rule == TargetRule::AllToOne && target < 0) throw ConfigError("target class must be >= 0");
  if (trigger == TriggerKind::Patch) {
    if (patch.rank() != 3 || patch.dim(0) != image_shape[0]) {
      throw ConfigError("patch must be (C,th,tw) with C=" + std::to_string(image_shape[0]));
    }
    if (patch_row + patch.dim(1) > image_shape[1] || patch_col + patch.dim(2) > image_shape[2]) {
      throw ConfigError("patch at (" + std::to_string(patch_row) + "," + std::to_string(patch_col) +
                        ") of size " + std::to_string(patch.dim(1)) + "x" +
                        std::to_string(patch.dim(2)) + " does not fit a " +
                        std::to_string(image_shape[1]) + "x" + std::to_string(image_shape[2]) +
                        " image");
    }
  } else {
    if (blend_pattern.shape() != image_shape) {
      throw ConfigError("blend pattern must have the image shape " + shape_to_string(image_shape));
    }
    if (!(blend_alpha >= 0.0f && blend_alpha < 1.0f)) {
      throw ConfigError("blend ratio must lie in [0,1)");
    }
  }
}

PoisonSpec make_patch_spec(const Shape& image_shape, std::size_t size) {
  if (image_shape.size() != 3 || size == 0 || size > image_shape[1] || size > image_shape[2]) {
    throw ConfigError("patch size " + std::to_string(size) + " does not fit the image");
  }
  PoisonSpec spec;
  spec.trigger = TriggerKind::Patch;
  spec.patch = Tensor({image_shape[0], size, size});
  for (std::size_t c = 0; c < image_shape[0]; ++c)
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j)
        spec.patch[(c * size + i) * size + j] = (i + j) % 2 == 0 ? 1.0f : 0.0f;
  spec.patch_row = image_shape[1] - size;
  spec.patch_col = image_shape[2] - size;
  return spec;
}

PoisonSpec make_blended_spec(const Shape& image_shape, float alpha, std::uint64_t pattern_seed) {
  PoisonSpec spec;
  spec.trigger = TriggerKind::Blended;
  spec.blend_alpha = alpha;
  spec.blend_pattern = Tensor(image_shape);
  Rng rng(pattern_seed);
  for (float& v : spec.blend_pattern.data()) v = static_cast<float>(rng.uniform());
  return spec;
}

namespace {

void trigger_in_place(float* img, const Shape& s, const PoisonSpec& spec) {
  const std::size_t c = s[0], h = s[1], w = s[2];
  if (spec.trigger == TriggerKind::Patch) {
    const std::size_t th = spec.patch.dim(1), tw = spec.patch.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j)
          img[(ch * h + spec.patch_row + i) * w + spec.patch_col + j] =
              std::clamp(spec.patch[(ch * th + i) * tw + j], 0.0f, 1.0f);
  } else {
    const float a = spec.blend_alpha;
    if (a == 0.0f) return;
    const auto pattern = spec.blend_pattern.data();
    for (std::size_t i = 0; i < c * h * w; ++i) {
      img[i] = std::clamp((1.0f - a) * img[i] + a * pattern[i], 0.0f, 1.0f);
    }
  }
}

}  // namespace

Tensor apply_trigger(const Tensor& x, const PoisonSpec& spec) {
  if (x.rank() != 3) throw DimensionError("apply_trigger expects a (C,H,W) image");
  spec.validate(x.shape());
  Tensor out = x;
  trigger_in_place(out.data().data(), x.shape(), spec);
  return out;
}

Tensor apply_trigger_batch(const Tensor& images, const PoisonSpec& spec) {
  if (images.rank() != 4) throw DimensionError("apply_trigger_batch expects (N,C,H,W)");
  const Shape s{images.dim(1), images.dim(2), images.dim(3)};
  spec.validate(s);
  Tensor out = images;
  const std::size_t per = shape_numel(s);
  for (std::size_t n = 0; n < images.dim(0); ++n) trigger_in_place(out.data().data() + n * per, s, spec);
  return out;
}

int target_label(int y, TargetRule rule, int target, std::size_t classes) {
  if (rule == TargetRule::AllToOne) return target;
  return static_cast<int>((static_cast<std::size_t>(y) + 1) % classes);
}

PoisonResult poison_dataset(const Dataset& d, const PoisonSpec& spec) {
  d.validate();
  spec.validate(d.image_shape());
  if (spec.rule == TargetRule::AllToOne && static_cast<std::size_t>(spec.target) >= d.classes) {
    throw ConfigError("target class " + std::to_string(spec.target) + " outside the label range");
  }
  const std::size_t n = d.size();
  const auto count = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + count);
  std::sort(chosen.begin(), chosen.end());

  PoisonResult result{d, chosen};
  const Shape s = d.image_shape();
  const std::size_t per = shape_numel(s);
  for (std::size_t idx : chosen) {
    trigger_in_place(result.data.images.data().data() + idx * per, s, spec);
    result.data.labels[idx] = target_label(d.labels[idx], spec.rule, spec.target, d.classes);
  }
  return result;
}

namespace {

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {float(v), float(t), float(p)};
    case 1: return {float(q), float(v), float(p)};
    case 2: return {float(p), float(v), float(t)};
    case 3: return {float(p), float(q), float(v)};
    case 4: return {float(t), float(p), float(v)};
    default: return {float(v), float(p), float(q)};
  }
}

// Whether offset (dx, dy) from the center, in units of the shape radius, lies
// on the shape drawn for class `kind`.
bool inside_shape(std::size_t kind, double dx, double dy) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  const double r = std::sqrt(dx * dx + dy * dy);
  switch (kind % 10) {
    case 0: return ax <= 1.0 && ay <= 1.0;                              // square
    case 1: return ax <= 1.0 && ay <= 1.0 && (ax >= 0.55 || ay >= 0.55);  // frame
    case 2: return r <= 1.0;                                            // disk
    case 3: return r <= 1.0 && r >= 0.55;                               // ring
    case 4: return (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0);  // plus
    case 5: return std::abs(ax - ay) <= 0.3 && ax <= 1.0;               // x
    case 6: return ax <= 1.0 && ay <= 1.0 && std::fmod(dy + 1.0, 0.8) < 0.4;  // stripes
    case 7: return ax <= 1.0 && ay <= 1.0 && std::fmod(dx + 1.0, 0.8) < 0.4;  // columns
    case 8: return dy <= 1.0 && dy >= -1.0 && ax <= (dy + 1.0) / 2.0;  // triangle
    default: return ax + ay <= 1.0;                                     // diamond
  }
}

}  // namespace

Dataset make_synthetic_dataset(std::size_t classes, std::size_t per_class, std::size_t size,
                               std::uint64_t seed, Split split, std::size_t channels) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least two classes");
  if (per_class == 0) throw ConfigError("synthetic dataset needs at least one sample per class");
  if (size < 8) throw ConfigError("synthetic images must be at least 8x8");
  if (channels != 1 && channels != 3) throw ConfigError("synthetic images have 1 or 3 channels");

  const std::size_t n = classes * per_class;
  Dataset d;
  d.images = Tensor({n, channels, size, size});
  d.labels.resize(n);
  d.classes = classes;
  d.split = split;

  Rng rng(seed);
  const double s = static_cast<double>(size);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    d.labels[i] = static_cast<int>(label);

    const double hue = static_cast<double>(label) / static_cast<double>(classes) + rng.uniform(-0.03, 0.03);
    const auto fg = hsv_to_rgb(hue, rng.uniform(0.6, 0.9), rng.uniform(0.7, 1.0));
    const double bg_level = rng.uniform(0.0, 0.3);
    const auto bg = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.4), bg_level);
    const double radius = s * rng.uniform(0.22, 0.34);
    const double cx = s / 2.0 + rng.uniform(-0.12, 0.12) * s;
    const double cy = s / 2.0 + rng.uniform(-0.12, 0.12) * s;

    float* img = d.images.data().data() + i * channels * size * size;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / radius;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / radius;
        const bool on = inside_shape(label, dx, dy);
        for (std::size_t c = 0; c < channels; ++c) {
          double v;
          if (channels == 1) {
            v = on ? (fg[0] + fg[1] + fg[2]) / 3.0 : (bg[0] + bg[1] + bg[2]) / 3.0;
          } else {
            v = on ? fg[c] : bg[c];
          }
          v += 0.05 * rng.normal();
          img[(c * size + y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return d;
}

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarSide = 32;

void append_cifar_file(const std::filesystem::path& file, std::vector<std::uint8_t>& all) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) +
                          " is not a positive multiple of " + std::to_string(kCifarRecord),
                      bytes.size() - bytes.size() % kCifarRecord);
  }
  all.insert(all.end(), bytes.begin(), bytes.end());
}

}  // namespace

Dataset load_cifar_binary(const std::filesystem::path& path, Split split) {
  std::vector<std::uint8_t> bytes;
  if (std::filesystem::is_directory(path)) {
    if (split == Split::Test) {
      append_cifar_file(path / "test_batch.bin", bytes);
    } else {
      for (int i = 1; i <= 5; ++i) append_cifar_file(path / ("data_batch_" + std::to_string(i) + ".bin"), bytes);
    }
  } else {
    append_cifar_file(path, bytes);
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset d;
  d.images = Tensor({n, 3, kCifarSide, kCifarSide});
  d.labels.resize(n);
  d.classes = 10;
  d.split = split;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] >= 10) throw FormatError("label byte out of range", r * kCifarRecord);
    d.labels[r] = rec[0];
    float* dst = d.images.data().data() + r * 3 * kCifarSide * kCifarSide;
    for (std::size_t i = 0; i < 3 * kCifarSide * kCifarSide; ++i) dst[i] = static_cast<float>(rec[1 + i]) / 255.0f;
  }
  return d;
}

void write_cifar_binary(const Dataset& d, const std::filesystem::path& file) {
  d.validate();
  if (d.image_shape() != Shape{3, kCifarSide, kCifarSide} || d.classes > 256) {
    throw ConfigError("CIFAR records hold 3x32x32 images with byte labels");
  }
  std::vector<std::uint8_t> out;
  out.reserve(d.size() * kCifarRecord);
  for (std::size_t r = 0; r < d.size(); ++r) {
    out.push_back(static_cast<std::uint8_t>(d.labels[r]));
    const float* src = d.images.data().data() + r * 3 * kCifarSide * kCifarSide;
    for (std::size_t i = 0; i < 3 * kCifarSide * kCifarSide; ++i) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0f, 1.0f) * 255.0f)));
    }
  }
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace clp
