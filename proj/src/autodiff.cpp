#include "segadv/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "segadv/error.hpp"

namespace segadv {

namespace {

std::atomic<std::uint64_t> g_backward_passes{0};

[[noreturn]] void shape_error(OpKind kind, NodeId node, const std::string& what) {
  throw Error(ErrorKind::kShapeMismatch, std::string(op_name(kind)) + " (node " +
                                             std::to_string(node) + "): " + what);
}

void check_same_tape(OpKind kind, Var a, Var b) {
  if (&a.tape() != &b.tape()) {
    throw Error(ErrorKind::kInvalidArgument,
                std::string(op_name(kind)) + ": operands live on different tapes");
  }
}

Tape::Node make_node(OpKind kind, std::initializer_list<Var> inputs, Tensor value) {
  Tape::Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (Var v : inputs) {
    n.inputs[n.input_count++] = v.id();
    n.requires_grad = n.requires_grad || v.tape().node(v.id()).requires_grad;
  }
  return n;
}

Tensor& ensure(std::vector<Tensor>& grads, NodeId id, const Shape& shape) {
  if (grads[id].size() == 0 && shape_size(shape) != 0) grads[id] = Tensor(shape);
  if (grads[id].shape() != shape) grads[id] = Tensor(shape);
  return grads[id];
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kDense: return "dense";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSign: return "sign";
    case OpKind::kReshape: return "reshape";
  }
  return "unknown";
}

std::uint64_t backward_pass_count() { return g_backward_passes.load(); }

const Tensor& Var::value() const { return tape_->node(id_).value; }

const Tensor& GradientResult::input(Var v) const {
  auto it = wrt_inputs.find(v.id());
  if (it == wrt_inputs.end()) {
    throw Error(ErrorKind::kInvalidArgument,
                "node " + std::to_string(v.id()) + " is not an input leaf");
  }
  return it->second;
}

const Tensor& GradientResult::param(std::size_t param_id) const {
  auto it = wrt_params.find(param_id);
  if (it == wrt_params.end()) {
    throw Error(ErrorKind::kInvalidArgument,
                "no parameter with id " + std::to_string(param_id));
  }
  return it->second;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  Node n;
  n.role = LeafRole::kInput;
  n.requires_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(std::size_t param_id, Tensor value) {
  Node n;
  n.role = LeafRole::kParam;
  n.requires_grad = true;
  n.param_id = param_id;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.role = LeafRole::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

GradientResult Tape::backward(Var output) {
  if (shape_size(output.shape()) != 1) {
    throw Error(ErrorKind::kShapeMismatch, "backward without a seed needs a single-element output, got " +
                                               shape_string(output.shape()) + " (node " +
                                               std::to_string(output.id()) + ")");
  }
  return backward(output, Tensor(output.shape(), 1.0));
}

GradientResult Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "backward on an empty tape");
  }
  if (&output.tape() != this) {
    throw Error(ErrorKind::kInvalidArgument, "output belongs to another tape");
  }
  if (seed.shape() != output.shape()) {
    throw Error(ErrorKind::kShapeMismatch,
                "seed " + shape_string(seed.shape()) + " vs output " +
                    shape_string(output.shape()) + " (node " +
                    std::to_string(output.id()) + ")");
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[output.id()] = seed;
  for (NodeId id = output.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.kind == OpKind::kLeaf) continue;
    if (grads[id].size() == 0 && shape_size(n.value.shape()) != 0) continue;
    accumulate_backward(id, grads[id], grads);
    grads[id] = Tensor();
  }

  GradientResult result;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.role != LeafRole::kInput && n.role != LeafRole::kParam) continue;
    Tensor g = grads[id].shape() == n.value.shape() ? std::move(grads[id])
                                                    : Tensor(n.value.shape());
    if (n.role == LeafRole::kInput) {
      result.wrt_inputs.emplace(id, std::move(g));
    } else {
      auto [it, inserted] = result.wrt_params.emplace(n.param_id, g);
      if (!inserted) {
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
      }
    }
  }
  g_backward_passes.fetch_add(1, std::memory_order_relaxed);
  return result;
}

void Tape::accumulate_backward(NodeId id, const Tensor& grad,
                               std::vector<Tensor>& grads) const {
  const Node& n = nodes_[id];
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in_value = [&](std::size_t k) -> const Tensor& {
    return nodes_[n.inputs[k]].value;
  };
  auto in_grad = [&](std::size_t k) -> Tensor& {
    return ensure(grads, n.inputs[k], nodes_[n.inputs[k]].value.shape());
  };

  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kSign:
      return;

    case OpKind::kConv2d: {
      const Tensor& x = in_value(0);
      const Tensor& w = in_value(1);
      const std::size_t height = x.shape()[0], width = x.shape()[1];
      const std::size_t cin = x.shape()[2], cout = w.shape()[3];
      const std::size_t k = w.shape()[0];
      const long pad = static_cast<long>(k / 2);
      const double* gout = grad.data().data();

      if (wants(0)) {
        // Kernel transposed to K x K x Cout x Cin so the inner loop runs
        // contiguously over input channels.
        std::vector<double> wt(w.size());
        for (std::size_t tap = 0; tap < k * k; ++tap)
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t co = 0; co < cout; ++co)
              wt[(tap * cout + co) * cin + ci] = w[(tap * cin + ci) * cout + co];
        double* gx = in_grad(0).data().data();
        for (std::size_t oy = 0; oy < height; ++oy) {
          for (std::size_t ox = 0; ox < width; ++ox) {
            const double* g = gout + (oy * width + ox) * cout;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long iy = static_cast<long>(oy + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(height)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long ix = static_cast<long>(ox + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(width)) continue;
                double* __restrict dst = gx + (iy * width + ix) * cin;
                const double* wtap = wt.data() + (ky * k + kx) * cout * cin;
                for (std::size_t co = 0; co < cout; ++co) {
                  const double gv = g[co];
                  if (gv == 0.0) continue;
                  const double* __restrict wr = wtap + co * cin;
                  for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] += gv * wr[ci];
                }
              }
            }
          }
        }
#ifdef SEGADV_FAULT_INJECTION
        for (double& v : in_grad(0).data()) v *= 1.0001;
#endif
      }
      if (wants(1)) {
        double* gw = in_grad(1).data().data();
        for (std::size_t oy = 0; oy < height; ++oy) {
          for (std::size_t ox = 0; ox < width; ++ox) {
            const double* __restrict g = gout + (oy * width + ox) * cout;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long iy = static_cast<long>(oy + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(height)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long ix = static_cast<long>(ox + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(width)) continue;
                const double* src = x.data().data() + (iy * width + ix) * cin;
                double* wtap = gw + (ky * k + kx) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const double v = src[ci];
                  if (v == 0.0) continue;
                  double* __restrict dst = wtap + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) dst[co] += v * g[co];
                }
              }
            }
          }
        }
      }
      if (wants(2)) {
        double* gb = in_grad(2).data().data();
        for (std::size_t p = 0; p < height * width; ++p)
          for (std::size_t co = 0; co < cout; ++co) gb[co] += gout[p * cout + co];
      }
      return;
    }

    case OpKind::kRelu: {
      if (!wants(0)) return;
      const Tensor& x = in_value(0);
      Tensor& gx = in_grad(0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) gx[i] += grad[i];
      }
      return;
    }

    case OpKind::kDense: {
      const Tensor& x = in_value(0);
      const Tensor& w = in_value(1);
      const std::size_t kin = w.shape()[0], m = w.shape()[1];
      if (wants(0)) {
        Tensor& gx = in_grad(0);
        for (std::size_t i = 0; i < kin; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += w[i * m + j] * grad[j];
          gx[i] += acc;
        }
      }
      if (wants(1)) {
        Tensor& gw = in_grad(1);
        for (std::size_t i = 0; i < kin; ++i)
          for (std::size_t j = 0; j < m; ++j) gw[i * m + j] += x[i] * grad[j];
      }
      if (wants(2)) {
        Tensor& gb = in_grad(2);
        for (std::size_t j = 0; j < m; ++j) gb[j] += grad[j];
      }
      return;
    }

    case OpKind::kGlobalAvgPool: {
      if (!wants(0)) return;
      Tensor& gx = in_grad(0);
      const std::size_t c = grad.size();
      const std::size_t pixels = gx.size() / c;
      const double inv = 1.0 / static_cast<double>(pixels);
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) gx[p * c + ch] += grad[ch] * inv;
      return;
    }

    case OpKind::kAdd:
    case OpKind::kSub: {
      const double sb = n.kind == OpKind::kAdd ? 1.0 : -1.0;
      if (wants(0)) {
        Tensor& ga = in_grad(0);
        for (std::size_t i = 0; i < grad.size(); ++i) ga[i] += grad[i];
      }
      if (wants(1)) {
        Tensor& gb = in_grad(1);
        for (std::size_t i = 0; i < grad.size(); ++i) gb[i] += sb * grad[i];
      }
      return;
    }

    case OpKind::kMul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      if (wants(0)) {
        Tensor& ga = in_grad(0);
        for (std::size_t i = 0; i < grad.size(); ++i) ga[i] += grad[i] * b[i];
      }
      if (wants(1)) {
        Tensor& gb = in_grad(1);
        for (std::size_t i = 0; i < grad.size(); ++i) gb[i] += grad[i] * a[i];
      }
      return;
    }

    case OpKind::kScale: {
      if (!wants(0)) return;
      Tensor& ga = in_grad(0);
      for (std::size_t i = 0; i < grad.size(); ++i) ga[i] += grad[i] * n.factor;
      return;
    }

    case OpKind::kSoftmaxCrossEntropy: {
      if (!wants(0)) return;
      Tensor& gz = in_grad(0);
      const std::size_t m = n.saved.shape().back();
      const double upstream = grad[0] / static_cast<double>(n.labeled);
      for (std::size_t row = 0; row < n.labels.size(); ++row) {
        const std::uint8_t y = n.labels[row];
        if (y == kIgnoreLabel) continue;
        const double* p = n.saved.data().data() + row * m;
        double* g = gz.data().data() + row * m;
        for (std::size_t i = 0; i < m; ++i) {
          g[i] += upstream * (p[i] - (i == y ? 1.0 : 0.0));
        }
      }
      return;
    }

    case OpKind::kSum:
    case OpKind::kMean: {
      if (!wants(0)) return;
      Tensor& ga = in_grad(0);
      const double g = n.kind == OpKind::kSum
                           ? grad[0]
                           : grad[0] / static_cast<double>(ga.size());
      for (double& v : ga.data()) v += g;
      return;
    }

    case OpKind::kReshape: {
      if (!wants(0)) return;
      Tensor& ga = in_grad(0);
      for (std::size_t i = 0; i < grad.size(); ++i) ga[i] += grad[i];
      return;
    }
  }
}

Var conv2d(Var x, Var kernel, Var bias) {
  check_same_tape(OpKind::kConv2d, x, kernel);
  check_same_tape(OpKind::kConv2d, x, bias);
  Tape& tape = x.tape();
  const NodeId id = tape.next_id();
  const Tensor& xv = x.value();
  const Tensor& wv = kernel.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 3) shape_error(OpKind::kConv2d, id, "input must be HxWxC, got " + shape_string(xv.shape()));
  if (wv.rank() != 4 || wv.shape()[0] != wv.shape()[1] || wv.shape()[0] % 2 == 0) {
    shape_error(OpKind::kConv2d, id, "kernel must be KxKxCinxCout with odd K, got " + shape_string(wv.shape()));
  }
  if (wv.shape()[2] != xv.shape()[2]) {
    shape_error(OpKind::kConv2d, id, "input channels " + std::to_string(xv.shape()[2]) +
                                         " != kernel channels " + std::to_string(wv.shape()[2]));
  }
  if (bv.shape() != Shape{wv.shape()[3]}) {
    shape_error(OpKind::kConv2d, id, "bias " + shape_string(bv.shape()) + " for " +
                                         std::to_string(wv.shape()[3]) + " output channels");
  }
  const std::size_t height = xv.shape()[0], width = xv.shape()[1];
  const std::size_t cin = wv.shape()[2], cout = wv.shape()[3];
  const std::size_t k = wv.shape()[0];
  const long pad = static_cast<long>(k / 2);
  Tensor out(Shape{height, width, cout});
  const double* src = xv.data().data();
  const double* w = wv.data().data();
  for (std::size_t oy = 0; oy < height; ++oy) {
    for (std::size_t ox = 0; ox < width; ++ox) {
      double* __restrict dst = out.data().data() + (oy * width + ox) * cout;
      for (std::size_t co = 0; co < cout; ++co) dst[co] = bv[co];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy + ky) - pad;
        if (iy < 0 || iy >= static_cast<long>(height)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox + kx) - pad;
          if (ix < 0 || ix >= static_cast<long>(width)) continue;
          const double* px = src + (iy * width + ix) * cin;
          const double* wtap = w + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = px[ci];
            if (v == 0.0) continue;
            const double* __restrict wr = wtap + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) dst[co] += v * wr[co];
          }
        }
      }
    }
  }
  return tape.push(make_node(OpKind::kConv2d, {x, kernel, bias}, std::move(out)));
}

Var relu(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (tape.recording_branches()) {
    for (std::size_t i = 0; i < xv.size(); ++i) tape.record_branch(xv[i] > 0.0 ? 1 : 0);
  }
  return tape.push(make_node(OpKind::kRelu, {x}, std::move(out)));
}

Var dense(Var x, Var weight, Var bias) {
  check_same_tape(OpKind::kDense, x, weight);
  check_same_tape(OpKind::kDense, x, bias);
  Tape& tape = x.tape();
  const NodeId id = tape.next_id();
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 1) shape_error(OpKind::kDense, id, "input must be a vector, got " + shape_string(xv.shape()));
  if (wv.rank() != 2 || wv.shape()[0] != xv.shape()[0]) {
    shape_error(OpKind::kDense, id, "weight " + shape_string(wv.shape()) + " for input " + shape_string(xv.shape()));
  }
  if (bv.shape() != Shape{wv.shape()[1]}) {
    shape_error(OpKind::kDense, id, "bias " + shape_string(bv.shape()) + " for weight " + shape_string(wv.shape()));
  }
  const std::size_t kin = wv.shape()[0], m = wv.shape()[1];
  Tensor out = bv;
  for (std::size_t i = 0; i < kin; ++i) {
    const double v = xv[i];
    for (std::size_t j = 0; j < m; ++j) out[j] += v * wv[i * m + j];
  }
  return tape.push(make_node(OpKind::kDense, {x, weight, bias}, std::move(out)));
}

Var global_avg_pool(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 3) {
    shape_error(OpKind::kGlobalAvgPool, tape.next_id(), "input must be HxWxC, got " + shape_string(xv.shape()));
  }
  const std::size_t c = xv.shape()[2];
  const std::size_t pixels = xv.shape()[0] * xv.shape()[1];
  Tensor out(Shape{c});
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += xv[p * c + ch];
  for (double& v : out.data()) v /= static_cast<double>(pixels);
  return tape.push(make_node(OpKind::kGlobalAvgPool, {x}, std::move(out)));
}

namespace {

Var elementwise(OpKind kind, Var a, Var b) {
  check_same_tape(kind, a, b);
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    shape_error(kind, tape.next_id(), shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (kind) {
      case OpKind::kAdd: out[i] = av[i] + bv[i]; break;
      case OpKind::kSub: out[i] = av[i] - bv[i]; break;
      default: out[i] = av[i] * bv[i]; break;
    }
  }
  return tape.push(make_node(kind, {a, b}, std::move(out)));
}

}  // namespace

Var add(Var a, Var b) { return elementwise(OpKind::kAdd, a, b); }
Var sub(Var a, Var b) { return elementwise(OpKind::kSub, a, b); }
Var mul(Var a, Var b) { return elementwise(OpKind::kMul, a, b); }

Var scale(Var a, double factor) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  Tape::Node n = make_node(OpKind::kScale, {a}, std::move(out));
  n.factor = factor;
  return a.tape().push(std::move(n));
}

Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels) {
  Tape& tape = logits.tape();
  const NodeId id = tape.next_id();
  const Tensor& z = logits.value();
  if (z.rank() == 0) shape_error(OpKind::kSoftmaxCrossEntropy, id, "logits need a class axis");
  const std::size_t m = z.shape().back();
  const std::size_t rows = z.size() / m;
  if (labels.size() != rows) {
    shape_error(OpKind::kSoftmaxCrossEntropy, id,
                std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                    " logit rows of " + shape_string(z.shape()));
  }
  Tensor probs = softmax(z);
  double total = 0.0;
  std::size_t labeled = 0;
  for (std::size_t row = 0; row < rows; ++row) {
    const std::uint8_t y = labels[row];
    if (y == kIgnoreLabel) continue;
    if (y >= m) {
      throw Error(ErrorKind::kInvalidArgument,
                  "label " + std::to_string(y) + " out of range for " + std::to_string(m) + " classes");
    }
    // log-softmax evaluated from the logits directly for accuracy.
    const double* zr = z.data().data() + row * m;
    const double zmax = *std::max_element(zr, zr + m);
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += std::exp(zr[i] - zmax);
    total += std::log(s) + zmax - zr[y];
    ++labeled;
  }
  if (labeled == 0) {
    throw Error(ErrorKind::kUndefinedLoss, "no labeled pixels");
  }
  Tape::Node n = make_node(OpKind::kSoftmaxCrossEntropy, {logits},
                           Tensor::scalar(total / static_cast<double>(labeled)));
  n.saved = std::move(probs);
  n.labels.assign(labels.begin(), labels.end());
  n.labeled = labeled;
  return tape.push(std::move(n));
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().push(make_node(OpKind::kSum, {a}, Tensor::scalar(s)));
}

Var mean(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto count = static_cast<double>(a.value().size());
  return a.tape().push(make_node(OpKind::kMean, {a}, Tensor::scalar(s / count)));
}

Var sign(Var a) {
  Tape::Node n = make_node(OpKind::kSign, {a}, sign(a.value()));
  n.requires_grad = false;
  return a.tape().push(std::move(n));
}

Var reshape(Var a, Shape shape) {
  Tape& tape = a.tape();
  if (shape_size(shape) != a.value().size()) {
    shape_error(OpKind::kReshape, tape.next_id(),
                shape_string(a.shape()) + " cannot become " + shape_string(shape));
  }
  return tape.push(make_node(OpKind::kReshape, {a}, a.value().reshaped(std::move(shape))));
}

}  // namespace segadv
