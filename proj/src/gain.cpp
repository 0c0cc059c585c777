#include "segadv/gain.hpp"

#include <string>

#include "segadv/error.hpp"
#include "segadv/loss.hpp"

namespace segadv {

namespace {

std::size_t rows_for(const Tensor& logits, std::span<const std::uint8_t> labels,
                     std::size_t m) {
  if (logits.rank() == 0 || m < 2) {
    throw Error(ErrorKind::kShapeMismatch, "logits need a class axis of at least 2");
  }
  const std::size_t rows = logits.size() / m;
  if (labels.size() != rows) {
    throw Error(ErrorKind::kShapeMismatch, std::to_string(labels.size()) + " labels for " +
                                               std::to_string(rows) + " pixels");
  }
  for (std::uint8_t y : labels) {
    if (y != kIgnoreLabel && y >= m) {
      throw Error(ErrorKind::kInvalidArgument,
                  "label " + std::to_string(y) + " out of range for " + std::to_string(m) +
                      " classes");
    }
  }
  return rows;
}

}  // namespace

std::size_t tie_broken_argmax(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

GainValue logit_gain(std::span<const double> logits, std::size_t y) {
  if (y >= logits.size() || logits.size() < 2) {
    throw Error(ErrorKind::kInvalidArgument, "class " + std::to_string(y) + " out of range");
  }
  std::size_t runner = y == 0 ? 1 : 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != y && logits[i] > logits[runner]) runner = i;
  }
  return {logits[y] - logits[runner], runner};
}

GainValue gain_classification(const LogitModel& model, const Tensor& x, std::size_t y) {
  const Tensor z = evaluate_logits(model, x);
  if (z.size() != model.class_count()) {
    throw Error(ErrorKind::kShapeMismatch,
                "classification gain needs a single logit vector, got " + shape_string(z.shape()));
  }
  return logit_gain(z.data(), y);
}

PixelGainMap pixel_gains_from_logits(const Tensor& logits, std::span<const std::uint8_t> labels) {
  const std::size_t m = logits.rank() ? logits.shape().back() : 0;
  const std::size_t rows = rows_for(logits, labels, m);
  PixelGainMap map;
  map.pixels.resize(rows);
  for (std::size_t j = 0; j < rows; ++j) {
    if (labels[j] == kIgnoreLabel) continue;
    map.pixels[j] = logit_gain(logits.data().subspan(j * m, m), labels[j]);
    ++map.labeled_count;
  }
  return map;
}

PixelGainMap pixel_gain(const LogitModel& model, const Tensor& x,
                        std::span<const std::uint8_t> labels) {
  return pixel_gains_from_logits(evaluate_logits(model, x), labels);
}

GainExpression averaged_gain_expression(Var logits, std::span<const std::uint8_t> labels) {
  const Tensor& z = logits.value();
  const std::size_t m = z.rank() ? z.shape().back() : 0;
  const std::size_t rows = rows_for(z, labels, m);
  Tensor mask(z.shape());
  std::size_t labeled = 0;
  Tape& tape = logits.tape();
  for (std::size_t j = 0; j < rows; ++j) {
    const std::uint8_t y = labels[j];
    if (y == kIgnoreLabel) continue;
    const GainValue g = logit_gain(z.data().subspan(j * m, m), y);
    mask[j * m + y] = 1.0;
    mask[j * m + g.runner_up] = -1.0;
    tape.record_branch(static_cast<std::uint8_t>(g.runner_up));
    ++labeled;
  }
  if (labeled == 0) {
    throw Error(ErrorKind::kUndefinedGain, "averaged gain needs at least one labeled pixel");
  }
  Var total = sum(mul(logits, tape.constant(std::move(mask))));
  return {scale(total, 1.0 / static_cast<double>(labeled)), labeled};
}

AveragedGain averaged_gain(const LogitModel& model, const Tensor& x,
                           std::span<const std::uint8_t> labels) {
  Tape tape;
  Var input = tape.input(x);
  const GainExpression g = averaged_gain_expression(model.logits(tape, input), labels);
  AveragedGain out;
  out.value = g.value.value().item();
  out.labeled_pixel_count = g.labeled;
  out.gradient = tape.backward(g.value).input(input);
  return out;
}

double loss_ce_ignore(const Tensor& logits, std::span<const std::uint8_t> labels) {
  Tape tape;
  return softmax_cross_entropy(tape.constant(logits), labels).value().item();
}

}  // namespace segadv
