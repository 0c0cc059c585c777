#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "segadv/autodiff.hpp"
#include "segadv/models.hpp"

namespace segadv {

/// Margin between the true-class logit and the strongest competitor.
/// Positive iff the prediction is correct (ties aside).
struct GainValue {
  double value = 0.0;
  std::size_t runner_up = 0;
};

/// Argmax with ties broken toward the lowest class index. The same rule is
/// used for predictions in evaluation.
std::size_t tie_broken_argmax(std::span<const double> logits);

/// z_y - max_{i != y} z_i; the runner-up is the lowest index achieving the max.
GainValue logit_gain(std::span<const double> logits, std::size_t y);

GainValue gain_classification(const LogitModel& model, const Tensor& x, std::size_t y);

struct PixelGainMap {
  /// One entry per pixel; empty for IGNORE pixels.
  std::vector<std::optional<GainValue>> pixels;
  std::size_t labeled_count = 0;
};

PixelGainMap pixel_gains_from_logits(const Tensor& logits, std::span<const std::uint8_t> labels);
PixelGainMap pixel_gain(const LogitModel& model, const Tensor& x,
                        std::span<const std::uint8_t> labels);

struct AveragedGain {
  double value = 0.0;
  std::size_t labeled_pixel_count = 0;
  Tensor gradient;
};

/// Mean gain over labeled pixels and its input gradient from one backward
/// pass. Throws kUndefinedGain when no pixel is labeled.
AveragedGain averaged_gain(const LogitModel& model, const Tensor& x,
                           std::span<const std::uint8_t> labels);

/// Tape form of the averaged gain. Each labeled pixel's runner-up is chosen
/// from the current logit values and then held fixed, so the expression is
/// sum(logits * mask) / labeled with a constant +1/-1 mask. The choices are
/// recorded as tape branches for kink detection.
struct GainExpression {
  Var value;
  std::size_t labeled = 0;
};
GainExpression averaged_gain_expression(Var logits, std::span<const std::uint8_t> labels);

}  // namespace segadv
