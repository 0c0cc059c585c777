#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segadv/autodiff.hpp"

namespace segadv {

/// A program builds its output on the given tape from one input Var per
/// supplied tensor. It must be a pure function of the tensor values.
using Program = std::function<Var(Tape&, std::span<const Var>)>;

struct Coordinate {
  std::size_t input = 0;
  std::size_t index = 0;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  Coordinate worst{};
  std::size_t checked = 0;
  /// Coordinates whose +h/-h evaluations take different relu or argmax
  /// branches: "kink coordinate, excluded".
  std::vector<Coordinate> kink_coordinates;
  /// Set when any evaluation produced a non-finite value.
  std::optional<Coordinate> non_finite;
  bool passed = false;

  std::string summary() const;
};

/// Compares the tape gradient of <seed, program(inputs)> against central
/// differences with step h in every input coordinate. The seed is a fixed
/// pseudo-random tensor for non-scalar outputs and 1 for scalars.
///
/// relative error = |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// with floor = 1e-3 * max |analytic| over all coordinates (1e-12 minimum),
/// which keeps near-zero entries from reporting pure rounding noise.
FiniteDiffReport finite_diff_check(const Program& program,
                                   const std::vector<Tensor>& inputs, double h,
                                   double tol);

}  // namespace segadv

namespace segadv {

struct OpCheck {
  std::string name;
  FiniteDiffReport report;
};

/// One finite-difference check per operation kind, plus the averaged-gain
/// input gradient through SegMini and the loss parameter gradient through
/// ClassMini. Inputs are drawn from `seed`.
std::vector<OpCheck> gradcheck_suite(std::uint64_t seed, double h = 1e-5, double tol = 1e-6);

}  // namespace segadv
