#pragma once

#include <cstdint>
#include <span>

#include "segadv/tensor.hpp"

namespace segadv {

/// Mean softmax cross-entropy over labeled pixels of an (..., M) logit map.
/// IGNORE pixels leave both numerator and denominator.
double loss_ce_ignore(const Tensor& logits, std::span<const std::uint8_t> labels);

}  // namespace segadv
