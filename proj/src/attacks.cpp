#include "segadv/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "segadv/autodiff.hpp"
#include "segadv/error.hpp"
#include "segadv/gain.hpp"

namespace segadv {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, message);
}

void require_radius(double epsilon) {
  require(std::isfinite(epsilon) && epsilon >= 0.0, "epsilon must be finite and >= 0");
}

struct GainGradient {
  double gain = 0.0;
  Tensor gradient;
};

GainGradient gain_input_gradient(const LogitModel& model, const Tensor& x,
                                 std::span<const std::uint8_t> labels) {
  Tape tape;
  Var input = tape.input(x);
  const GainExpression g = averaged_gain_expression(model.logits(tape, input), labels);
  return {g.value.value().item(), tape.backward(g.value).input(input)};
}

AdversarialExample newton_attack(const LogitModel& model, const Tensor& x,
                                 std::span<const std::uint8_t> labels) {
  const GainGradient g = gain_input_gradient(model, x, labels);
  AdversarialExample out;
  out.gradient_evaluations = 1;
  const std::optional<double> step = newton_step_size(g.gain, g.gradient);
  if (!step) {
    out.x_adv = x;
    out.degenerate = true;
    return out;
  }
  out.x_adv = signed_step(x, g.gradient, -*step);
  clamp_unit(out.x_adv);
  out.step_size_used = *step;
  out.ball_radius = max_abs_difference(out.x_adv, x);
  return out;
}

}  // namespace

std::string attack_family_name(AttackFamily family) {
  switch (family) {
    case AttackFamily::kFgsm: return "fgsm";
    case AttackFamily::kFgsmRandom: return "fgsm-rand";
    case AttackFamily::kBim: return "bim";
    case AttackFamily::kFastNewton: return "fast-newton";
  }
  return "unknown";
}

AttackFamily parse_attack_family(const std::string& name) {
  for (AttackFamily f : {AttackFamily::kFgsm, AttackFamily::kFgsmRandom, AttackFamily::kBim,
                         AttackFamily::kFastNewton}) {
    if (attack_family_name(f) == name) return f;
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown attack family '" + name + "'");
}

void AttackConfig::validate() const {
  require_radius(epsilon);
  if (family == AttackFamily::kFgsmRandom) require(epsilon > 0.0, "eps_max must be > 0");
  if (family == AttackFamily::kBim) {
    require(std::isfinite(alpha) && alpha > 0.0, "alpha must be > 0");
    require(n_steps >= 1, "n_steps must be >= 1");
  }
}

std::optional<std::string> AttackConfig::reach_warning() const {
  if (family == AttackFamily::kBim && alpha * static_cast<double>(n_steps) < epsilon) {
    return "alpha * n_steps = " + std::to_string(alpha * static_cast<double>(n_steps)) +
           " cannot reach epsilon = " + std::to_string(epsilon);
  }
  return std::nullopt;
}

Tensor signed_step(const Tensor& x, const Tensor& direction, double step) {
  if (x.shape() != direction.shape()) {
    throw Error(ErrorKind::kShapeMismatch, "step direction " + shape_string(direction.shape()) +
                                               " for input " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + step * sign(direction[i]);
  return out;
}

Tensor project_linf(const Tensor& p, const Tensor& center, double radius) {
  if (p.shape() != center.shape()) {
    throw Error(ErrorKind::kShapeMismatch, "projection of " + shape_string(p.shape()) +
                                               " around " + shape_string(center.shape()));
  }
  Tensor out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::min(std::max(p[i], center[i] - radius), center[i] + radius);
  }
  return out;
}

void clamp_unit(Tensor& x) {
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
}

std::optional<double> newton_step_size(double gain, const Tensor& gain_gradient) {
  const double norm = l1_norm(gain_gradient);
  if (!(norm >= kDegenerateGradientL1)) return std::nullopt;
  return std::max(0.0, gain) / norm;
}

LossGradient loss_input_gradient(const LogitModel& model, const Tensor& x,
                                 std::span<const std::uint8_t> labels) {
  Tape tape;
  Var input = tape.input(x);
  Var loss = softmax_cross_entropy(model.logits(tape, input), labels);
  return {loss.value().item(), tape.backward(loss).input(input)};
}

AdversarialExample fgsm(const LogitModel& model, const Tensor& x,
                        std::span<const std::uint8_t> labels, double epsilon) {
  require_radius(epsilon);
  const LossGradient g = loss_input_gradient(model, x, labels);
  AdversarialExample out;
  out.x_adv = signed_step(x, g.gradient, epsilon);
  clamp_unit(out.x_adv);
  out.step_size_used = epsilon;
  out.ball_radius = epsilon;
  out.gradient_evaluations = 1;
  return out;
}

AdversarialExample fgsm_random_eps(const LogitModel& model, const Tensor& x,
                                   std::span<const std::uint8_t> labels, double eps_max,
                                   Rng& rng) {
  require(std::isfinite(eps_max) && eps_max > 0.0, "eps_max must be > 0");
  return fgsm(model, x, labels, rng.uniform(0.0, eps_max));
}

AdversarialExample bim(const LogitModel& model, const Tensor& x,
                       std::span<const std::uint8_t> labels, double epsilon, double alpha,
                       std::size_t n_steps) {
  require_radius(epsilon);
  require(std::isfinite(alpha) && alpha > 0.0, "alpha must be > 0");
  require(n_steps >= 1, "n_steps must be >= 1");
  AdversarialExample out;
  out.x_adv = x;
  for (std::size_t step = 0; step < n_steps; ++step) {
    const LossGradient g = loss_input_gradient(model, out.x_adv, labels);
    out.x_adv = project_linf(signed_step(out.x_adv, g.gradient, alpha), x, epsilon);
    clamp_unit(out.x_adv);
    ++out.gradient_evaluations;
  }
  out.step_size_used = alpha;
  out.ball_radius = epsilon;
  return out;
}

AdversarialExample fast_newton_classification(const LogitModel& model, const Tensor& x,
                                              std::size_t y) {
  require(y < model.class_count(), "class label out of range");
  const std::uint8_t label = static_cast<std::uint8_t>(y);
  return newton_attack(model, x, std::span<const std::uint8_t>(&label, 1));
}

AdversarialExample fast_newton_segmentation(const LogitModel& model, const Tensor& x,
                                            std::span<const std::uint8_t> labels) {
  return newton_attack(model, x, labels);
}

AdversarialExample run_attack(const AttackConfig& config, const LogitModel& model,
                              const Tensor& x, std::span<const std::uint8_t> labels, Rng& rng) {
  config.validate();
  switch (config.family) {
    case AttackFamily::kFgsm: return fgsm(model, x, labels, config.epsilon);
    case AttackFamily::kFgsmRandom: return fgsm_random_eps(model, x, labels, config.epsilon, rng);
    case AttackFamily::kBim:
      return bim(model, x, labels, config.epsilon, config.alpha, config.n_steps);
    case AttackFamily::kFastNewton: return fast_newton_segmentation(model, x, labels);
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown attack family");
}

}  // namespace segadv
