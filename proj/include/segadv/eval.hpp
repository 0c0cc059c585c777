#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "segadv/attacks.hpp"
#include "segadv/data.hpp"
#include "segadv/models.hpp"

namespace segadv {

/// Rows are ground truth, columns predictions. IGNORE pixels are never added.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count)
      : classes_(class_count), counts_(class_count * class_count, 0) {}

  std::size_t class_count() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::uint64_t total() const;

  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  /// Adds every labeled pixel of a label map and its prediction map.
  void add_maps(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Mean over classes of TP / (TP + FP + FN); classes with TP + FP + FN == 0
/// are left out. Throws kUndefinedMetric when every class is left out.
double mean_iou(const ConfusionMatrix& confusion);

/// Tie-broken argmax per pixel of an (..., M) logit map.
std::vector<std::uint8_t> predict_labels(const Tensor& logits);

struct Evaluation {
  ConfusionMatrix confusion;
  double mean_iou = 0.0;
};

/// Confusion over the dataset; with an attack, every image is replaced by its
/// adversarial example first. Attack errors propagate. Random-radius attacks
/// draw from a stream derived from (attack.rng_seed, image index).
Evaluation evaluate(const ModelWeights& weights, const LabeledBatch& dataset,
                    const std::optional<AttackConfig>& attack = std::nullopt);

struct CurvePoint {
  double epsilon = 0.0;
  double mean_iou = 0.0;
};

struct RobustnessCurve {
  AttackConfig attack;
  std::vector<CurvePoint> points;

  /// Header `epsilon,mean_iou`, 17 significant digits.
  void write_csv(std::ostream& out) const;
};

struct CurveOptions {
  double eps_max = 0.04;
  std::size_t n_points = 9;
  double bim_alpha = 0.004;
  std::size_t bim_steps = 10;
  std::uint64_t rng_seed = 0;
};

/// n_points equally spaced radii from 0 to eps_max inclusive.
std::vector<double> epsilon_grid(double eps_max, std::size_t n_points);

/// Mean IoU under `family` at every grid radius. kFastNewton is rejected: it
/// chooses its own radius.
RobustnessCurve robustness_curve(const ModelWeights& weights, const LabeledBatch& dataset,
                                 AttackFamily family, const CurveOptions& options = {});

/// Formats a double with 17 significant digits, as all CSV outputs do.
std::string format_float(double v);

}  // namespace segadv
