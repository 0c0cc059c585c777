#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "segadv/tensor.hpp"

namespace segadv {

inline constexpr std::uint8_t kIgnoreLabel = 255;

enum class OpKind : std::uint8_t {
  kLeaf,
  kConv2d,
  kRelu,
  kDense,
  kGlobalAvgPool,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSoftmaxCrossEntropy,
  kSum,
  kMean,
  kSign,
  kReshape,
};

std::string_view op_name(OpKind kind);

using NodeId = std::size_t;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

struct GradientResult {
  std::map<NodeId, Tensor> wrt_inputs;
  std::map<std::size_t, Tensor> wrt_params;

  const Tensor& input(Var v) const;
  const Tensor& param(std::size_t param_id) const;
};

/// Process-wide number of completed backward passes (all tapes, all threads).
std::uint64_t backward_pass_count();

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so every node's inputs precede it and a single reverse sweep suffices.
/// A tape belongs to one thread.
class Tape {
 public:
  enum class LeafRole : std::uint8_t { kNone, kInput, kParam, kConstant };

  struct Node {
    OpKind kind = OpKind::kLeaf;
    LeafRole role = LeafRole::kNone;
    std::array<NodeId, 3> inputs{};
    std::uint8_t input_count = 0;
    bool requires_grad = false;
    Tensor value;
    std::size_t param_id = 0;
    double factor = 0.0;                // kScale
    Tensor saved;                       // kSoftmaxCrossEntropy: probabilities
    std::vector<std::uint8_t> labels;   // kSoftmaxCrossEntropy
    std::size_t labeled = 0;            // kSoftmaxCrossEntropy
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf whose gradient is reported in wrt_inputs.
  Var input(Tensor value);
  /// Differentiable leaf whose gradient is reported in wrt_params[param_id].
  Var param(std::size_t param_id, Tensor value);
  /// Non-differentiable leaf.
  Var constant(Tensor value);

  GradientResult backward(Var output, const Tensor& seed);
  /// Seed of one for a single-element output.
  GradientResult backward(Var output);

  /// When on, relu nodes and explicit record_branch() calls append to the
  /// branch pattern; finite-difference checks compare patterns to detect kinks.
  void set_record_branches(bool on) { record_branches_ = on; }
  bool recording_branches() const { return record_branches_; }
  void record_branch(std::uint8_t b) {
    if (record_branches_) branches_.push_back(b);
  }
  const std::vector<std::uint8_t>& branch_pattern() const { return branches_; }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }

  Var push(Node node);
  NodeId next_id() const { return nodes_.size(); }

 private:
  void accumulate_backward(NodeId id, const Tensor& grad,
                           std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  std::vector<std::uint8_t> branches_;
  bool record_branches_ = false;
};

// Operations. Shapes are checked eagerly; a mismatch throws Error with the
// operation name and the node id it would have received.

/// x: H x W x Cin, kernel: K x K x Cin x Cout (K odd), bias: Cout.
/// Stride 1 with zero "same" padding; output H x W x Cout.
Var conv2d(Var x, Var kernel, Var bias);
Var relu(Var x);
/// x: K, weight: K x M, bias: M.
Var dense(Var x, Var weight, Var bias);
/// H x W x C -> C.
Var global_avg_pool(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Mean softmax cross-entropy over labeled rows of an (..., M) logit tensor.
/// labels has one entry per row; kIgnoreLabel rows are excluded from both the
/// sum and the count. Throws kUndefinedLoss if no row is labeled.
Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels);
Var sum(Var a);
Var mean(Var a);
/// Forward-only sign; contributes no gradient.
Var sign(Var a);
Var reshape(Var a, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace segadv
