#include <array>
#include <cmath>

#include "segadv/gain.hpp"
#include "segadv/gradcheck.hpp"
#include "segadv/models.hpp"
#include "segadv/rng.hpp"

namespace segadv {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so sign() and relu() keep their branch under
// a +-h probe most of the time; the checker excludes the rest anyway.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

std::vector<std::uint8_t> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<std::uint8_t> labels(n);
  for (auto& y : labels) {
    y = rng.bernoulli(0.2) ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(classes));
  }
  labels[0] = 0;
  return labels;
}

}  // namespace

std::vector<OpCheck> gradcheck_suite(std::uint64_t seed, double h, double tol) {
  Rng rng = Rng::stream(seed, stream_tag::kInit, 0xc4ec);
  std::vector<OpCheck> out;
  auto run = [&](std::string name, const Program& program, const std::vector<Tensor>& inputs) {
    out.push_back({std::move(name), finite_diff_check(program, inputs, h, tol)});
  };

  run("conv2d",
      [](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], v[2]); },
      {random_tensor(rng, {5, 5, 2}, -1, 1), random_tensor(rng, {3, 3, 2, 3}, -1, 1),
       random_tensor(rng, {3}, -1, 1)});
  run("relu", [](Tape&, std::span<const Var> v) { return relu(v[0]); },
      {away_from_zero(rng, {4, 4, 3})});
  run("dense",
      [](Tape&, std::span<const Var> v) { return dense(v[0], v[1], v[2]); },
      {random_tensor(rng, {6}, -1, 1), random_tensor(rng, {6, 4}, -1, 1),
       random_tensor(rng, {4}, -1, 1)});
  run("global_avg_pool", [](Tape&, std::span<const Var> v) { return global_avg_pool(v[0]); },
      {random_tensor(rng, {4, 3, 5}, -1, 1)});
  run("add", [](Tape&, std::span<const Var> v) { return v[0] + v[1]; },
      {random_tensor(rng, {3, 4}, -1, 1), random_tensor(rng, {3, 4}, -1, 1)});
  run("sub", [](Tape&, std::span<const Var> v) { return v[0] - v[1]; },
      {random_tensor(rng, {3, 4}, -1, 1), random_tensor(rng, {3, 4}, -1, 1)});
  run("mul", [](Tape&, std::span<const Var> v) { return v[0] * v[1]; },
      {random_tensor(rng, {3, 4}, -1, 1), random_tensor(rng, {3, 4}, -1, 1)});
  run("scale", [](Tape&, std::span<const Var> v) { return scale(v[0], -2.5); },
      {random_tensor(rng, {7}, -1, 1)});

  const auto ce_labels = random_labels(rng, 9, 4);
  run("softmax_cross_entropy",
      [&ce_labels](Tape&, std::span<const Var> v) { return softmax_cross_entropy(v[0], ce_labels); },
      {random_tensor(rng, {3, 3, 4}, -3, 3)});
  run("sum", [](Tape&, std::span<const Var> v) { return sum(v[0]); },
      {random_tensor(rng, {2, 5}, -1, 1)});
  run("mean", [](Tape&, std::span<const Var> v) { return mean(v[0]); },
      {random_tensor(rng, {2, 5}, -1, 1)});
  run("sign", [](Tape&, std::span<const Var> v) { return sum(v[0] * sign(v[0])); },
      {away_from_zero(rng, {10})});
  run("reshape", [](Tape&, std::span<const Var> v) { return reshape(v[0], {6, 4}) * v[1]; },
      {random_tensor(rng, {2, 3, 4}, -1, 1), random_tensor(rng, {6, 4}, -1, 1)});

  const ModelWeights seg = build(ArchitectureId::kSegMini, 4, rng.next_u64());
  const auto gain_labels = random_labels(rng, 36, 4);
  run("averaged_gain_input_gradient",
      [&seg, &gain_labels](Tape& tape, std::span<const Var> v) {
        const auto params = bind_params(tape, seg, false);
        const Var z = network_logits(seg.architecture, params, v[0]);
        return averaged_gain_expression(z, gain_labels).value;
      },
      {random_tensor(rng, {6, 6, 3}, 0, 1)});

  const ModelWeights cls = build(ArchitectureId::kClassMini, 3, rng.next_u64());
  std::vector<Tensor> cls_inputs{random_tensor(rng, {5, 5, 3}, 0, 1)};
  for (const Layer& layer : cls.layers) cls_inputs.push_back(layer.value);
  const std::array<std::uint8_t, 1> cls_label{2};
  run("classmini_loss_parameter_gradient",
      [&cls, &cls_label](Tape&, std::span<const Var> v) {
        const Var z = network_logits(cls.architecture, v.subspan(1), v[0]);
        return softmax_cross_entropy(z, cls_label);
      },
      cls_inputs);
  return out;
}

}  // namespace segadv
