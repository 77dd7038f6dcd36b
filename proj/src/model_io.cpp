#include "clp/model_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "clp/errors.hpp"

namespace clp {

static_assert(std::endian::native == std::endian::little,
              "CLPW blobs are written by memcpy and assume a little-endian host");

namespace {

constexpr std::size_t kHeaderSize = 12;

std::string dims_token(const Tensor& t) {
  std::string s;
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i) s += 'x';
    s += std::to_string(t.dim(i));
  }
  return s;
}

std::string float_token(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

// Ordered (name, tensor) list for a layer; this order is the blob order.
std::vector<std::pair<const char*, const Tensor*>> layer_tensors(const Layer& layer) {
  if (const auto* c = std::get_if<Conv>(&layer.op)) return {{"weight", &c->weight}, {"bias", &c->bias}};
  if (const auto* b = std::get_if<BatchNorm>(&layer.op))
    return {{"gamma", &b->gamma},
            {"beta", &b->beta},
            {"running_mean", &b->running_mean},
            {"running_var", &b->running_var}};
  if (const auto* l = std::get_if<Linear>(&layer.op)) return {{"weight", &l->weight}, {"bias", &l->bias}};
  return {};
}

std::string layer_line(const Layer& layer) {
  std::ostringstream os;
  os << layer_kind_name(layer);
  if (layer.input) os << " input=" << *layer.input;
  if (const auto* c = std::get_if<Conv>(&layer.op)) {
    os << " stride=" << c->stride << " padding=" << c->padding;
  } else if (const auto* b = std::get_if<BatchNorm>(&layer.op)) {
    os << " epsilon=" << float_token(b->epsilon);
  } else if (const auto* p = std::get_if<MaxPool>(&layer.op)) {
    os << " window=" << p->window << " stride=" << p->stride;
  } else if (const auto* q = std::get_if<AvgPool>(&layer.op)) {
    os << " window=" << q->window << " stride=" << q->stride;
  } else if (const auto* r = std::get_if<ResidualAdd>(&layer.op)) {
    os << " source=" << r->source;
  }
  for (const auto& [name, t] : layer_tensors(layer)) os << ' ' << name << '=' << dims_token(*t);
  return os.str();
}

}  // namespace

std::string model_manifest(const ModelGraph& model) {
  std::ostringstream os;
  const Shape& in = model.input_shape();
  os << "input " << in[0] << ' ' << in[1] << ' ' << in[2] << '\n';
  os << "classes " << model.class_count() << '\n';
  os << "layers " << model.size() << '\n';
  for (const auto& layer : model.layers()) os << layer_line(layer) << '\n';
  return os.str();
}

std::vector<std::uint8_t> serialize_model(const ModelGraph& model) {
  const std::string manifest = model_manifest(model);
  std::vector<std::uint8_t> out;
  std::size_t blob_bytes = 0;
  for (const auto& layer : model.layers())
    for (const auto& [name, t] : layer_tensors(layer)) blob_bytes += t->size() * sizeof(float);
  out.reserve(kHeaderSize + manifest.size() + blob_bytes);
  out.insert(out.end(), std::begin(kClpwMagic), std::end(kClpwMagic));
  put_u32(out, kClpwVersion);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (const auto& layer : model.layers()) {
    for (const auto& [name, t] : layer_tensors(layer)) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(t->data().data());
      out.insert(out.end(), p, p + t->size() * sizeof(float));
    }
  }
  return out;
}

namespace {

class ManifestParser {
 public:
  ManifestParser(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  // Next line split into whitespace tokens; records the line's byte offset.
  std::vector<std::string> next_line() {
    if (pos_ >= end_) throw FormatError("unexpected end of manifest", pos_);
    line_offset_ = pos_;
    std::size_t stop = pos_;
    while (stop < end_ && bytes_[stop] != '\n') ++stop;
    if (stop == end_) throw FormatError("manifest line is not newline-terminated", line_offset_);
    std::string line(bytes_.begin() + pos_, bytes_.begin() + stop);
    pos_ = stop + 1;
    std::istringstream is(line);
    std::vector<std::string> tokens{std::istream_iterator<std::string>(is),
                                    std::istream_iterator<std::string>()};
    if (tokens.empty()) fail("empty manifest line");
    return tokens;
  }

  bool at_end() const { return pos_ >= end_; }
  std::size_t line_offset() const { return line_offset_; }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, line_offset_); }

  std::size_t parse_count(const std::string& s) const {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail("bad integer '" + s + "'");
    return v;
  }

  float parse_float(const std::string& s) const {
    float v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail("bad float '" + s + "'");
    return v;
  }

  Shape parse_dims(const std::string& s) const {
    Shape shape;
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t x = s.find('x', start);
      const std::string part = s.substr(start, x == std::string::npos ? std::string::npos : x - start);
      const std::size_t d = parse_count(part);
      if (d == 0 || d > (std::size_t{1} << 40)) fail("bad tensor dimension in '" + s + "'");
      shape.push_back(d);
      if (shape_numel(shape) > (std::size_t{1} << 40)) fail("tensor '" + s + "' is implausibly large");
      if (x == std::string::npos) break;
      start = x + 1;
    }
    return shape;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_;
  std::size_t end_;
  std::size_t line_offset_ = 0;
};

struct PendingTensor {
  std::string name;
  Shape shape;
};

Tensor& tensor_by_name(Layer& layer, const std::string& name) {
  if (auto* c = std::get_if<Conv>(&layer.op)) return name == "weight" ? c->weight : c->bias;
  if (auto* l = std::get_if<Linear>(&layer.op)) return name == "weight" ? l->weight : l->bias;
  auto& b = std::get<BatchNorm>(layer.op);
  if (name == "gamma") return b.gamma;
  if (name == "beta") return b.beta;
  if (name == "running_mean") return b.running_mean;
  return b.running_var;
}

Layer parse_layer(const ManifestParser& p, const std::vector<std::string>& tokens,
                  std::vector<PendingTensor>& pending) {
  const std::string& kind = tokens[0];
  Layer layer;
  if (kind == "conv") layer.op = Conv{};
  else if (kind == "batchnorm") layer.op = BatchNorm{};
  else if (kind == "relu") layer.op = Relu{};
  else if (kind == "maxpool") layer.op = MaxPool{};
  else if (kind == "avgpool") layer.op = AvgPool{};
  else if (kind == "linear") layer.op = Linear{};
  else if (kind == "add") layer.op = ResidualAdd{};
  else if (kind == "flatten") layer.op = Flatten{};
  else p.fail("unknown layer kind '" + kind + "'");

  std::vector<std::pair<std::string, Shape>> tensors;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string::npos || eq == 0) p.fail("expected key=value, got '" + tokens[i] + "'");
    const std::string key = tokens[i].substr(0, eq);
    const std::string value = tokens[i].substr(eq + 1);
    if (!seen.insert(key).second) p.fail("duplicate key '" + key + "'");

    if (key == "input") {
      layer.input = p.parse_count(value);
      continue;
    }
    bool known = true;
    std::visit(
        [&](auto& op) {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, Conv>) {
            if (key == "stride") op.stride = p.parse_count(value);
            else if (key == "padding") op.padding = p.parse_count(value);
            else if (key == "weight" || key == "bias") tensors.emplace_back(key, p.parse_dims(value));
            else known = false;
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            if (key == "epsilon") op.epsilon = p.parse_float(value);
            else if (key == "gamma" || key == "beta" || key == "running_mean" || key == "running_var")
              tensors.emplace_back(key, p.parse_dims(value));
            else known = false;
          } else if constexpr (std::is_same_v<T, MaxPool> || std::is_same_v<T, AvgPool>) {
            if (key == "window") op.window = p.parse_count(value);
            else if (key == "stride") op.stride = p.parse_count(value);
            else known = false;
          } else if constexpr (std::is_same_v<T, Linear>) {
            if (key == "weight" || key == "bias") tensors.emplace_back(key, p.parse_dims(value));
            else known = false;
          } else if constexpr (std::is_same_v<T, ResidualAdd>) {
            if (key == "source") op.source = p.parse_count(value);
            else known = false;
          } else {
            known = false;
          }
        },
        layer.op);
    if (!known) p.fail("unknown key '" + key + "' for " + kind);
  }

  // Blob order follows the token order in the line.
  const std::size_t expected = layer_tensors(layer).size();
  if (tensors.size() != expected) p.fail(kind + " line lists the wrong tensors");
  for (auto& [name, shape] : tensors) pending.push_back({name, std::move(shape)});
  return layer;
}

}  // namespace

ModelGraph deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderSize) throw FormatError("file shorter than the CLPW header", bytes.size());
  if (std::memcmp(bytes.data(), kClpwMagic, 4) != 0) throw FormatError("bad magic, not a CLPW file", 0);
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kClpwVersion) {
    throw FormatError("unsupported CLPW version " + std::to_string(version), 4);
  }
  const std::size_t manifest_len = get_u32(bytes, 8);
  const std::size_t manifest_end = kHeaderSize + manifest_len;
  if (manifest_end > bytes.size()) throw FormatError("truncated manifest", bytes.size());

  ManifestParser p(bytes, kHeaderSize, manifest_end);
  auto expect_header = [&](const char* key, std::size_t count) {
    auto t = p.next_line();
    if (t[0] != key || t.size() != count + 1) p.fail(std::string("expected '") + key + "' record");
    return t;
  };
  const auto in = expect_header("input", 3);
  const Shape input_shape{p.parse_count(in[1]), p.parse_count(in[2]), p.parse_count(in[3])};
  const std::size_t classes = p.parse_count(expect_header("classes", 1)[1]);
  const std::size_t count = p.parse_count(expect_header("layers", 1)[1]);
  if (count > manifest_len) p.fail("layer count exceeds manifest size");

  std::vector<Layer> layers;
  layers.reserve(count);
  std::vector<std::vector<PendingTensor>> pending(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto tokens = p.next_line();
    layers.push_back(parse_layer(p, tokens, pending[i]));
  }
  if (!p.at_end()) throw FormatError("unexpected data after the last layer record", p.line_offset());

  std::size_t pos = manifest_end;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < pending[i].size(); ++j) {
      const Shape& shape = pending[i][j].shape;
      const std::size_t n = shape_numel(shape);
      const std::size_t nbytes = n * sizeof(float);
      if (nbytes > bytes.size() - pos) {
        throw FormatError("truncated tensor blob for layer " + std::to_string(i), pos);
      }
      std::vector<float> data(n);
      std::memcpy(data.data(), bytes.data() + pos, nbytes);
      pos += nbytes;
      tensor_by_name(layers[i], pending[i][j].name) = Tensor(shape, std::move(data));
    }
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after the last tensor blob", pos);

  try {
    return ModelGraph(input_shape, classes, std::move(layers));
  } catch (const StructureError& e) {
    throw FormatError(std::string("inconsistent model: ") + e.what(), kHeaderSize);
  }
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace clp
