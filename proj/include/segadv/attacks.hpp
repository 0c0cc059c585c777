#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "segadv/models.hpp"
#include "segadv/rng.hpp"
#include "segadv/tensor.hpp"

namespace segadv {

enum class AttackFamily : std::uint8_t { kFgsm, kFgsmRandom, kBim, kFastNewton };

std::string attack_family_name(AttackFamily family);
/// Accepts fgsm, fgsm-rand, bim, fast-newton.
AttackFamily parse_attack_family(const std::string& name);

struct AttackConfig {
  AttackFamily family = AttackFamily::kFgsm;
  /// L-infinity radius in intensity units; for kFgsmRandom the upper bound of
  /// the uniform radius draw.
  double epsilon = 0.03;
  double alpha = 0.01;
  std::size_t n_steps = 3;
  std::uint64_t rng_seed = 0;

  /// Throws kInvalidArgument on out-of-range parameters.
  void validate() const;
  /// Set when BIM cannot reach the ball boundary (alpha * n_steps < epsilon).
  std::optional<std::string> reach_warning() const;
};

struct AdversarialExample {
  Tensor x_adv;
  double step_size_used = 0.0;
  double ball_radius = 0.0;
  /// Forward+backward passes spent on input gradients.
  std::size_t gradient_evaluations = 0;
  /// Fast Newton only: the gain gradient had L1 norm below 1e-12.
  bool degenerate = false;
};

inline constexpr double kDegenerateGradientL1 = 1e-12;

/// x + step * sign(direction), elementwise.
Tensor signed_step(const Tensor& x, const Tensor& direction, double step);
/// Clip_{center, radius}: componentwise projection onto the L-infinity ball.
Tensor project_linf(const Tensor& p, const Tensor& center, double radius);
/// Componentwise clamp into the valid intensity range [0, 1].
void clamp_unit(Tensor& x);
/// Newton step toward the gain's zero crossing, max(0, gain) / ||grad||_1.
/// Empty when the gradient is degenerate.
std::optional<double> newton_step_size(double gain, const Tensor& gain_gradient);

struct LossGradient {
  double loss = 0.0;
  Tensor gradient;
};
/// Input gradient of the averaged cross-entropy over labeled pixels.
LossGradient loss_input_gradient(const LogitModel& model, const Tensor& x,
                                 std::span<const std::uint8_t> labels);

/// One signed step of size epsilon up the loss.
AdversarialExample fgsm(const LogitModel& model, const Tensor& x,
                        std::span<const std::uint8_t> labels, double epsilon);

/// fgsm with epsilon drawn uniformly from [0, eps_max].
AdversarialExample fgsm_random_eps(const LogitModel& model, const Tensor& x,
                                   std::span<const std::uint8_t> labels, double eps_max,
                                   Rng& rng);

/// n_steps signed steps of size alpha, each projected into the epsilon ball
/// around x and clamped to [0, 1]; a fresh loss gradient per step.
AdversarialExample bim(const LogitModel& model, const Tensor& x,
                       std::span<const std::uint8_t> labels, double epsilon, double alpha,
                       std::size_t n_steps);

/// One Newton step on the classification gain g(x, y), descending the gain.
AdversarialExample fast_newton_classification(const LogitModel& model, const Tensor& x,
                                              std::size_t y);

/// One Newton step on the averaged per-pixel gain over labeled pixels.
AdversarialExample fast_newton_segmentation(const LogitModel& model, const Tensor& x,
                                            std::span<const std::uint8_t> labels);

/// Dispatches on config.family. kFgsmRandom draws from rng.
AdversarialExample run_attack(const AttackConfig& config, const LogitModel& model,
                              const Tensor& x, std::span<const std::uint8_t> labels, Rng& rng);

}  // namespace segadv
