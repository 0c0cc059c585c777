#include "segadv/models.hpp"

#include <atomic>
#include <cmath>

#include "binary_io.hpp"
#include "segadv/error.hpp"
#include "segadv/rng.hpp"

namespace segadv {

namespace {

std::atomic<std::uint64_t> g_forward_passes{0};

constexpr std::string_view kWeightsMagic = "SEGADVW1";
constexpr std::string_view kWeightsFamily = "SEGADVW";

void conv_layer(std::vector<LayerSpec>& out, const std::string& name, std::size_t cin,
                std::size_t cout) {
  out.push_back({name + ".weight", Shape{3, 3, cin, cout}});
  out.push_back({name + ".bias", Shape{cout}});
}

}  // namespace

std::string architecture_name(ArchitectureId id) {
  return id == ArchitectureId::kSegMini ? "SegMini" : "ClassMini";
}

std::vector<LayerSpec> layer_layout(ArchitectureId id, std::size_t class_count) {
  std::vector<LayerSpec> layout;
  if (id == ArchitectureId::kSegMini) {
    conv_layer(layout, "conv1", 3, 16);
    conv_layer(layout, "conv2", 16, 32);
    conv_layer(layout, "conv3", 32, class_count);
  } else {
    conv_layer(layout, "conv1", 3, 8);
    conv_layer(layout, "conv2", 8, 16);
    layout.push_back({"dense.weight", Shape{16, class_count}});
    layout.push_back({"dense.bias", Shape{class_count}});
  }
  return layout;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.value.size();
  return n;
}

void ModelWeights::validate() const {
  const auto layout = layer_layout(architecture, class_count);
  if (layout.size() != layers.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                architecture_name(architecture) + " expects " + std::to_string(layout.size()) +
                    " layers, found " + std::to_string(layers.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != layers[i].name || layout[i].shape != layers[i].value.shape()) {
      throw Error(ErrorKind::kShapeMismatch,
                  "layer " + std::to_string(i) + " is " + layers[i].name +
                      shape_string(layers[i].value.shape()) + ", expected " + layout[i].name +
                      shape_string(layout[i].shape));
    }
  }
}

bool bit_identical(const ModelWeights& a, const ModelWeights& b) {
  if (a.architecture != b.architecture || a.class_count != b.class_count ||
      a.layers.size() != b.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].name != b.layers[i].name ||
        !bit_identical(a.layers[i].value, b.layers[i].value)) {
      return false;
    }
  }
  return true;
}

ModelWeights build(ArchitectureId id, std::size_t class_count, std::uint64_t rng_seed) {
  if (class_count < 2) {
    throw Error(ErrorKind::kInvalidArgument, "class_count must be at least 2");
  }
  ModelWeights w;
  w.architecture = id;
  w.class_count = class_count;
  const auto layout = layer_layout(id, class_count);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    Tensor t(layout[i].shape);
    if (layout[i].shape.size() > 1) {
      // Convolutions: fan = K*K*C; dense: fan = width.
      const Shape& s = layout[i].shape;
      const std::size_t receptive = s.size() == 4 ? s[0] * s[1] : 1;
      const double fan_in = static_cast<double>(receptive * s[s.size() - 2]);
      const double fan_out = static_cast<double>(receptive * s[s.size() - 1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      Rng rng = Rng::stream(rng_seed, stream_tag::kInit, i);
      for (double& v : t.data()) v = rng.uniform(-limit, limit);
    }
    w.layers.push_back({layout[i].name, std::move(t)});
  }
  return w;
}

Var network_logits(ArchitectureId id, std::span<const Var> params, Var x) {
  if (x.value().rank() != 3 || x.shape()[2] != 3) {
    throw Error(ErrorKind::kShapeMismatch,
                "network input must be HxWx3, got " + shape_string(x.shape()));
  }
  if (params.size() != 6) {
    throw Error(ErrorKind::kInvalidArgument, "wrong parameter count for " + architecture_name(id));
  }
  g_forward_passes.fetch_add(1, std::memory_order_relaxed);
  Var h = relu(conv2d(x, params[0], params[1]));
  h = relu(conv2d(h, params[2], params[3]));
  if (id == ArchitectureId::kSegMini) {
    return conv2d(h, params[4], params[5]);
  }
  return dense(global_avg_pool(h), params[4], params[5]);
}

std::vector<Var> bind_params(Tape& tape, const ModelWeights& weights, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(weights.layers.size());
  for (std::size_t i = 0; i < weights.layers.size(); ++i) {
    const Tensor& v = weights.layers[i].value;
    vars.push_back(trainable ? tape.param(i, v) : tape.constant(v));
  }
  return vars;
}

Tensor logits(const ModelWeights& weights, const Tensor& x) {
  return evaluate_logits(NetworkModel(weights), x);
}

std::uint64_t forward_pass_count() { return g_forward_passes.load(); }

Var NetworkModel::logits(Tape& tape, Var x) const {
  const auto params = bind_params(tape, *weights_, false);
  return network_logits(weights_->architecture, params, x);
}

AffineClassifier::AffineClassifier(Shape input_shape, Tensor weight, Tensor bias)
    : input_shape_(std::move(input_shape)), weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.shape() != Shape{shape_size(input_shape_), bias_.size()}) {
    throw Error(ErrorKind::kShapeMismatch, "affine weight " + shape_string(weight_.shape()) +
                                               " for input " + shape_string(input_shape_));
  }
}

Var AffineClassifier::logits(Tape& tape, Var x) const {
  if (x.shape() != input_shape_) {
    throw Error(ErrorKind::kShapeMismatch, "affine classifier input " + shape_string(x.shape()));
  }
  g_forward_passes.fetch_add(1, std::memory_order_relaxed);
  return dense(reshape(x, Shape{x.value().size()}), tape.constant(weight_), tape.constant(bias_));
}

AffineSegmenter::AffineSegmenter(Tensor kernel, Tensor bias)
    : kernel_(std::move(kernel)), bias_(std::move(bias)) {}

Var AffineSegmenter::logits(Tape& tape, Var x) const {
  g_forward_passes.fetch_add(1, std::memory_order_relaxed);
  return conv2d(x, tape.constant(kernel_), tape.constant(bias_));
}

Tensor evaluate_logits(const LogitModel& model, const Tensor& x) {
  Tape tape;
  return model.logits(tape, tape.constant(x)).value();
}

std::string encode_weights(const ModelWeights& weights) {
  detail::ByteWriter w;
  w.bytes(kWeightsMagic);
  w.u32(static_cast<std::uint32_t>(weights.layers.size()));
  for (const Layer& layer : weights.layers) {
    w.u16(static_cast<std::uint16_t>(layer.name.size()));
    w.bytes(layer.name);
    w.u8(static_cast<std::uint8_t>(layer.value.rank()));
    for (std::size_t extent : layer.value.shape()) w.u32(static_cast<std::uint32_t>(extent));
    for (double v : layer.value.data()) w.f64(v);
  }
  return w.buffer();
}

ModelWeights decode_weights(std::string_view bytes) {
  detail::ByteReader r(bytes);
  const std::string_view magic = r.bytes(kWeightsMagic.size(), "magic");
  if (magic != kWeightsMagic) {
    if (magic.substr(0, kWeightsFamily.size()) == kWeightsFamily) {
      throw Error(ErrorKind::kUnsupportedVersion, "weights format " + std::string(magic));
    }
    throw Error(ErrorKind::kBadMagic, "not a SEGADVW1 weights file");
  }
  const std::uint32_t count = r.u32("layer count");
  ModelWeights w;
  for (std::uint32_t i = 0; i < count; ++i) {
    Layer layer;
    const std::uint16_t name_len = r.u16("layer name length");
    layer.name = std::string(r.bytes(name_len, "layer name"));
    const std::uint8_t rank = r.u8("layer rank");
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.u32("layer extents"));
    const std::size_t n = shape_size(shape);
    if (r.remaining() / 8 < n) {
      throw Error(ErrorKind::kTruncated, "file ends inside layer " + layer.name);
    }
    std::vector<double> data(n);
    for (double& v : data) v = r.f64("layer data");
    layer.value = Tensor(std::move(shape), std::move(data));
    w.layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) {
    throw Error(ErrorKind::kCountMismatch,
                std::to_string(r.remaining()) + " trailing bytes after " + std::to_string(count) +
                    " layers");
  }
  if (w.layers.empty() || w.layers.back().value.rank() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "weights file has no output bias layer");
  }
  bool has_dense = false;
  for (const Layer& l : w.layers) has_dense = has_dense || l.name == "dense.weight";
  w.architecture = has_dense ? ArchitectureId::kClassMini : ArchitectureId::kSegMini;
  w.class_count = w.layers.back().value.size();
  w.validate();
  return w;
}

void save_weights(const ModelWeights& weights, const std::string& path) {
  detail::write_file(path, encode_weights(weights));
}

ModelWeights load_weights(const std::string& path) {
  return decode_weights(detail::read_file(path));
}

}  // namespace segadv
