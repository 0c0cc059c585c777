#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segadv/autodiff.hpp"
#include "segadv/tensor.hpp"

namespace segadv {

enum class ArchitectureId : std::uint8_t {
  /// conv3x3(3->16)/relu -> conv3x3(16->32)/relu -> conv3x3(32->M); H x W x M logits.
  kSegMini,
  /// conv3x3(3->8)/relu -> conv3x3(8->16)/relu -> global avg pool -> dense(16->M).
  kClassMini,
};

std::string architecture_name(ArchitectureId id);

struct LayerSpec {
  std::string name;
  Shape shape;
};

/// Declared parameter layout, in storage order.
std::vector<LayerSpec> layer_layout(ArchitectureId id, std::size_t class_count);

struct Layer {
  std::string name;
  Tensor value;
};

struct ModelWeights {
  ArchitectureId architecture = ArchitectureId::kSegMini;
  std::size_t class_count = 0;
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  /// Throws kShapeMismatch unless layers match layer_layout().
  void validate() const;
};

bool bit_identical(const ModelWeights& a, const ModelWeights& b);

/// Glorot-uniform weights, zero biases, deterministic in rng_seed.
ModelWeights build(ArchitectureId id, std::size_t class_count, std::uint64_t rng_seed);

/// Logits built on a tape from parameter Vars in layer_layout() order.
/// x must be H x W x 3.
Var network_logits(ArchitectureId id, std::span<const Var> params, Var x);

/// Parameters as tape leaves: differentiable (param id = layer index) when
/// trainable, constants otherwise.
std::vector<Var> bind_params(Tape& tape, const ModelWeights& weights, bool trainable);

/// Plain evaluation: H x W x M (SegMini) or M (ClassMini).
Tensor logits(const ModelWeights& weights, const Tensor& x);

/// Process-wide count of network forward evaluations.
std::uint64_t forward_pass_count();

/// Anything that maps an image to logits on a tape with frozen parameters.
/// Attacks and gain functions only need this view of a model.
class LogitModel {
 public:
  virtual ~LogitModel() = default;
  virtual Var logits(Tape& tape, Var x) const = 0;
  virtual std::size_t class_count() const = 0;
};

class NetworkModel final : public LogitModel {
 public:
  explicit NetworkModel(const ModelWeights& weights) : weights_(&weights) {}
  Var logits(Tape& tape, Var x) const override;
  std::size_t class_count() const override { return weights_->class_count; }
  const ModelWeights& weights() const { return *weights_; }

 private:
  const ModelWeights* weights_;
};

/// logits = W^T vec(x) + b for an image x of fixed shape.
class AffineClassifier final : public LogitModel {
 public:
  AffineClassifier(Shape input_shape, Tensor weight, Tensor bias);
  Var logits(Tape& tape, Var x) const override;
  std::size_t class_count() const override { return bias_.size(); }

 private:
  Shape input_shape_;
  Tensor weight_;
  Tensor bias_;
};

/// Per-pixel logits from a single same-padded convolution, affine in x.
class AffineSegmenter final : public LogitModel {
 public:
  AffineSegmenter(Tensor kernel, Tensor bias);
  Var logits(Tape& tape, Var x) const override;
  std::size_t class_count() const override { return bias_.size(); }

 private:
  Tensor kernel_;
  Tensor bias_;
};

/// Evaluates a LogitModel outside any caller tape.
Tensor evaluate_logits(const LogitModel& model, const Tensor& x);

/// SEGADVW1 weight files. Errors: kIo, kBadMagic, kUnsupportedVersion,
/// kTruncated, kShapeMismatch (layers disagree with the architecture),
/// kCountMismatch (trailing bytes).
void save_weights(const ModelWeights& weights, const std::string& path);
ModelWeights load_weights(const std::string& path);
std::string encode_weights(const ModelWeights& weights);
ModelWeights decode_weights(std::string_view bytes);

}  // namespace segadv
