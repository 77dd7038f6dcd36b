#include "clp/model_graph.hpp"

#include <algorithm>
#include <cmath>

#include "clp/errors.hpp"
#include "clp/parallel.hpp"
#include "kernels.hpp"

namespace clp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_vector(const Tensor& t, std::size_t n, const std::string& what) {
  if (t.rank() != 1 || t.dim(0) != n) {
    throw StructureError(what + " must have shape (" + std::to_string(n) + "), got " +
                         shape_to_string(t.shape()));
  }
}

// Evaluation chunk; outputs are per-sample so the chunk size never affects results.
constexpr std::size_t kForwardChunk = 128;

}  // namespace

std::string layer_kind_name(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Conv&) { return std::string("conv"); },
                        [](const BatchNorm&) { return std::string("batchnorm"); },
                        [](const Relu&) { return std::string("relu"); },
                        [](const MaxPool&) { return std::string("maxpool"); },
                        [](const AvgPool&) { return std::string("avgpool"); },
                        [](const Linear&) { return std::string("linear"); },
                        [](const ResidualAdd&) { return std::string("add"); },
                        [](const Flatten&) { return std::string("flatten"); },
                    },
                    layer.op);
}

ModelGraph::ModelGraph(Shape input_shape, std::size_t class_count, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), class_count_(class_count), layers_(std::move(layers)) {
  validate();
}

std::optional<std::size_t> ModelGraph::input_of(std::size_t i) const {
  if (i >= layers_.size()) throw IndexError("layer index out of range");
  if (layers_[i].input) return layers_[i].input;
  if (i == 0) return std::nullopt;
  return i - 1;
}

std::vector<std::size_t> ModelGraph::conv_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].is<Conv>()) out.push_back(i);
  return out;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    std::visit(overloaded{
                   [&](const Conv& c) { n += c.weight.size() + c.bias.size(); },
                   [&](const BatchNorm& b) { n += b.gamma.size() + b.beta.size(); },
                   [&](const Linear& lin) { n += lin.weight.size() + lin.bias.size(); },
                   [](const auto&) {},
               },
               l.op);
  }
  return n;
}

void ModelGraph::validate() {
  if (input_shape_.size() != 3 || shape_numel(input_shape_) == 0) {
    throw StructureError("input shape must be (C,H,W) with positive extents, got " +
                         shape_to_string(input_shape_));
  }
  if (class_count_ == 0) throw StructureError("class count must be positive");
  if (layers_.empty()) throw StructureError("model has no layers");

  shapes_.clear();
  shapes_.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(layer) + ")";
    if (layer.input && *layer.input >= i) {
      throw StructureError(where + ": input reference " + std::to_string(*layer.input) +
                           " does not precede it");
    }
    const auto src = input_of(i);
    const Shape in = src ? shapes_[*src] : input_shape_;

    Shape out = std::visit(
        overloaded{
            [&](const Conv& c) -> Shape {
              if (c.weight.rank() != 4) throw StructureError(where + ": weight must be rank 4");
              require_vector(c.bias, c.weight.dim(0), where + " bias");
              if (in.size() != 3 || in[0] != c.weight.dim(1)) {
                throw StructureError(where + ": expects " + std::to_string(c.weight.dim(1)) +
                                     " input channels, got shape " + shape_to_string(in));
              }
              try {
                return {c.weight.dim(0),
                        conv_output_extent(in[1], c.weight.dim(2), c.stride, c.padding),
                        conv_output_extent(in[2], c.weight.dim(3), c.stride, c.padding)};
              } catch (const DimensionError& e) {
                throw StructureError(where + ": " + e.what());
              }
            },
            [&](const BatchNorm& b) -> Shape {
              if (in.size() != 3) throw StructureError(where + ": expects a (C,H,W) input");
              const std::size_t k = in[0];
              require_vector(b.gamma, k, where + " gamma");
              require_vector(b.beta, k, where + " beta");
              require_vector(b.running_mean, k, where + " running_mean");
              require_vector(b.running_var, k, where + " running_var");
              if (!(b.epsilon > 0.0f)) throw StructureError(where + ": epsilon must be positive");
              for (float v : b.running_var.data())
                if (!(v >= 0.0f)) throw StructureError(where + ": running_var must be >= 0");
              return in;
            },
            [&](const Relu&) -> Shape { return in; },
            [&](const auto& p) -> Shape
              requires std::is_same_v<std::decay_t<decltype(p)>, MaxPool> ||
                       std::is_same_v<std::decay_t<decltype(p)>, AvgPool>
            {
              if (in.size() != 3) throw StructureError(where + ": expects a (C,H,W) input");
              try {
                return {in[0], conv_output_extent(in[1], p.window, p.stride, 0),
                        conv_output_extent(in[2], p.window, p.stride, 0)};
              } catch (const DimensionError& e) {
                throw StructureError(where + ": " + e.what());
              }
            },
            [&](const Flatten&) -> Shape { return {shape_numel(in)}; },
            [&](const Linear& l) -> Shape {
              if (l.weight.rank() != 2) throw StructureError(where + ": weight must be rank 2");
              require_vector(l.bias, l.weight.dim(0), where + " bias");
              if (in.size() != 1 || in[0] != l.weight.dim(1)) {
                throw StructureError(where + ": expects a flat input of width " +
                                     std::to_string(l.weight.dim(1)) + ", got " +
                                     shape_to_string(in));
              }
              return {l.weight.dim(0)};
            },
            [&](const ResidualAdd& r) -> Shape {
              if (r.source >= i) {
                throw StructureError(where + ": source " + std::to_string(r.source) +
                                     " does not precede it");
              }
              if (shapes_[r.source] != in) {
                throw StructureError(where + ": shape " + shape_to_string(in) +
                                     " does not match source shape " +
                                     shape_to_string(shapes_[r.source]));
              }
              return in;
            },
        },
        layer.op);
    shapes_.push_back(std::move(out));
  }
  const Shape& last = shapes_.back();
  if (last.size() != 1 || last[0] != class_count_) {
    throw StructureError("final layer must output " + std::to_string(class_count_) +
                         " logits, got " + shape_to_string(last));
  }
}

bool operator==(const ModelGraph& a, const ModelGraph& b) {
  if (a.input_shape_ != b.input_shape_ || a.class_count_ != b.class_count_ ||
      a.layers_.size() != b.layers_.size())
    return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const Layer& x = a.layers_[i];
    const Layer& y = b.layers_[i];
    if (x.input != y.input || x.op.index() != y.op.index()) return false;
    const bool same = std::visit(
        overloaded{
            [&](const Conv& c) {
              const auto& d = y.as<Conv>();
              return c.weight == d.weight && c.bias == d.bias && c.stride == d.stride &&
                     c.padding == d.padding;
            },
            [&](const BatchNorm& n) {
              const auto& m = y.as<BatchNorm>();
              return n.gamma == m.gamma && n.beta == m.beta && n.running_mean == m.running_mean &&
                     n.running_var == m.running_var && n.epsilon == m.epsilon;
            },
            [&](const MaxPool& p) {
              const auto& q = y.as<MaxPool>();
              return p.window == q.window && p.stride == q.stride;
            },
            [&](const AvgPool& p) {
              const auto& q = y.as<AvgPool>();
              return p.window == q.window && p.stride == q.stride;
            },
            [&](const Linear& l) {
              const auto& m = y.as<Linear>();
              return l.weight == m.weight && l.bias == m.bias;
            },
            [&](const ResidualAdd& r) { return r.source == y.as<ResidualAdd>().source; },
            [](const auto&) { return true; },
        },
        x.op);
    if (!same) return false;
  }
  return true;
}

const Tensor& ActivationTrace::at(std::size_t layer, std::size_t channel) const {
  auto it = maps.find({layer, channel});
  if (it == maps.end()) {
    throw IndexError("no trace recorded for layer " + std::to_string(layer) + " channel " +
                     std::to_string(channel));
  }
  return it->second;
}

namespace detail {

Tensor conv_forward(const Tensor& input, const Conv& conv) {
  return conv2d(input, conv.weight, conv.bias, conv.stride, conv.padding);
}

Tensor batchnorm_inference(const Tensor& input, const BatchNorm& bn) {
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.size() / (n * c);
  Tensor out(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double scale =
        static_cast<double>(bn.gamma[ch]) /
        std::sqrt(static_cast<double>(bn.running_var[ch]) + static_cast<double>(bn.epsilon));
    const double shift = static_cast<double>(bn.beta[ch]) - scale * bn.running_mean[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const float* src = input.data().data() + (s * c + ch) * plane;
      float* dst = out.data().data() + (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] = static_cast<float>(static_cast<double>(src[i]) * scale + shift);
    }
  }
  return out;
}

Tensor flatten(const Tensor& input) {
  const std::size_t n = input.dim(0);
  return input.reshaped({n, input.size() / n});
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  Tensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

}  // namespace detail

namespace {

Tensor apply_layer(const Layer& layer, const Tensor& in, const std::vector<Tensor>& outputs) {
  return std::visit(overloaded{
                        [&](const Conv& c) { return detail::conv_forward(in, c); },
                        [&](const BatchNorm& b) { return detail::batchnorm_inference(in, b); },
                        [&](const Relu&) { return relu(in); },
                        [&](const MaxPool& p) { return max_pool(in, p.window, p.stride); },
                        [&](const AvgPool& p) { return avg_pool(in, p.window, p.stride); },
                        [&](const Flatten&) { return detail::flatten(in); },
                        [&](const Linear& l) { return linear(in, l.weight, l.bias); },
                        [&](const ResidualAdd& r) { return detail::add(in, outputs[r.source]); },
                    },
                    layer.op);
}

void check_batch(const ModelGraph& model, const Tensor& batch) {
  if (model.layers().empty()) throw StructureError("model has no layers");
  const Shape& s = model.input_shape();
  if (batch.rank() != 4 || batch.dim(1) != s[0] || batch.dim(2) != s[1] || batch.dim(3) != s[2]) {
    throw DimensionError("batch shape " + shape_to_string(batch.shape()) +
                         " does not match model input (N," + std::to_string(s[0]) + "," +
                         std::to_string(s[1]) + "," + std::to_string(s[2]) + ")");
  }
}

// Last layer index that reads each layer's output.
std::vector<std::size_t> last_uses(const ModelGraph& model) {
  const std::size_t n = model.size();
  std::vector<std::size_t> last(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (auto src = model.input_of(i)) last[*src] = std::max(last[*src], i);
    if (const auto* r = std::get_if<ResidualAdd>(&model.layer(i).op))
      last[r->source] = std::max(last[r->source], i);
  }
  return last;
}

void run_chunk(const ModelGraph& model, const Tensor& chunk, const std::set<Probe>& probes,
               const std::vector<std::size_t>& last, Tensor& logits, std::size_t offset,
               ActivationTrace* trace, std::size_t total) {
  const std::size_t n = model.size();
  std::vector<Tensor> outputs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = model.input_of(i);
    const Tensor& in = src ? outputs[*src] : chunk;
    outputs[i] = apply_layer(model.layer(i), in, outputs);

    if (trace != nullptr) {
      for (auto it = probes.lower_bound({i, 0}); it != probes.end() && it->first == i; ++it) {
        const Tensor& out = outputs[i];
        const std::size_t rows = out.dim(0), k = out.dim(1), h = out.dim(2), w = out.dim(3);
        auto [pos, inserted] = trace->maps.try_emplace(*it, Shape{total, h, w});
        float* dst = pos->second.data().data();
        for (std::size_t s = 0; s < rows; ++s) {
          const float* src_plane = out.data().data() + (s * k + it->second) * h * w;
          std::copy(src_plane, src_plane + h * w, dst + (offset + s) * h * w);
        }
      }
    }
    // Drop intermediates nobody reads any more.
    if (src && last[*src] <= i) outputs[*src] = Tensor();
  }
  const Tensor& out = outputs[n - 1];
  std::copy(out.data().begin(), out.data().end(),
            logits.data().begin() + offset * model.class_count());
}

std::pair<Tensor, ActivationTrace> forward_impl(const ModelGraph& model, const Tensor& batch,
                                                const std::set<Probe>* probes) {
  check_batch(model, batch);
  static const std::set<Probe> kNone;
  const std::set<Probe>& ps = probes ? *probes : kNone;
  for (const auto& [layer, channel] : ps) {
    if (layer >= model.size() || !model.layer(layer).is<Conv>()) {
      throw IndexError("probe layer " + std::to_string(layer) + " is not a conv layer");
    }
    if (channel >= model.layer(layer).as<Conv>().out_channels()) {
      throw IndexError("probe channel " + std::to_string(channel) + " out of range for layer " +
                       std::to_string(layer));
    }
  }
  const std::size_t total = batch.dim(0);
  const auto last = last_uses(model);
  Tensor logits({total, model.class_count()});
  ActivationTrace trace;
  for (std::size_t b = 0; b < total; b += kForwardChunk) {
    const std::size_t e = std::min(total, b + kForwardChunk);
    const Tensor chunk = (b == 0 && e == total) ? batch : batch.slice_batch(b, e);
    run_chunk(model, chunk, ps, last, logits, b, ps.empty() ? nullptr : &trace, total);
  }
  return {std::move(logits), std::move(trace)};
}

}  // namespace

Tensor forward(const ModelGraph& model, const Tensor& batch) {
  return forward_impl(model, batch, nullptr).first;
}

std::pair<Tensor, ActivationTrace> forward_traced(const ModelGraph& model, const Tensor& batch,
                                                  const std::set<Probe>& probes) {
  return forward_impl(model, batch, &probes);
}

bool has_batchnorm(const ModelGraph& model) {
  return std::any_of(model.layers().begin(), model.layers().end(),
                     [](const Layer& l) { return l.is<BatchNorm>(); });
}

ModelGraph fuse_conv_bn(const ModelGraph& model) {
  const std::size_t n = model.size();
  // A conv's raw output disappears when its batchnorm is folded in, so nothing
  // other than that batchnorm may read it.
  std::vector<bool> folded(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (!model.layer(i).is<BatchNorm>()) continue;
    const auto src = model.input_of(i);
    if (!src || *src + 1 != i || !model.layer(*src).is<Conv>()) {
      throw StructureError("batchnorm at layer " + std::to_string(i) +
                           " is not immediately preceded by a conv");
    }
    folded[*src] = true;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = model.input_of(i);
    const bool reads_folded = (src && folded[*src] && !model.layer(i).is<BatchNorm>());
    const auto* r = std::get_if<ResidualAdd>(&model.layer(i).op);
    if (reads_folded || (r && folded[r->source])) {
      throw StructureError("layer " + std::to_string(i) +
                           " reads a conv output that feeds a batchnorm; cannot fuse");
    }
  }

  std::vector<std::size_t> remap(n, 0);
  std::vector<Layer> layers;
  layers.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Layer& layer = model.layer(i);
    if (layer.is<BatchNorm>()) {
      const BatchNorm& bn = layer.as<BatchNorm>();
      Conv& conv = layers.back().as<Conv>();
      const std::size_t k = conv.out_channels();
      const std::size_t per = conv.weight.size() / k;
      for (std::size_t ch = 0; ch < k; ++ch) {
        const double scale =
            static_cast<double>(bn.gamma[ch]) /
            std::sqrt(static_cast<double>(bn.running_var[ch]) + static_cast<double>(bn.epsilon));
        float* w = conv.weight.data().data() + ch * per;
        for (std::size_t j = 0; j < per; ++j) w[j] = static_cast<float>(scale * w[j]);
        conv.bias[ch] = static_cast<float>(
            static_cast<double>(bn.beta[ch]) +
            scale * (static_cast<double>(conv.bias[ch]) - static_cast<double>(bn.running_mean[ch])));
      }
      remap[i] = layers.size() - 1;
      continue;
    }
    Layer copy = layer;
    if (copy.input) copy.input = remap[*copy.input];
    if (auto* r = std::get_if<ResidualAdd>(&copy.op)) r->source = remap[r->source];
    // Default wiring (previous layer) stays correct unless the previous layer
    // was removed, which cannot happen: removed layers map onto their conv.
    remap[i] = layers.size();
    layers.push_back(std::move(copy));
  }
  return ModelGraph(model.input_shape(), model.class_count(), std::move(layers));
}

}  // namespace clp
