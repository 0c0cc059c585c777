#include "segadv/eval.hpp"

#include <cstdio>
#include <numeric>

#include "segadv/autodiff.hpp"
#include "segadv/error.hpp"
#include "segadv/gain.hpp"
#include "segadv/parallel.hpp"

namespace segadv {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  if (truth >= classes_ || predicted >= classes_) {
    throw Error(ErrorKind::kInvalidArgument, "class index out of range for confusion matrix");
  }
  counts_[truth * classes_ + predicted] += n;
}

void ConfusionMatrix::add_maps(std::span<const std::uint8_t> truth,
                               std::span<const std::uint8_t> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorKind::kShapeMismatch, "label and prediction maps differ in size");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kIgnoreLabel) continue;
    add(truth[i], predicted[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    throw Error(ErrorKind::kShapeMismatch, "confusion matrices differ in class count");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

double mean_iou(const ConfusionMatrix& confusion) {
  const std::size_t m = confusion.class_count();
  double total = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < m; ++c) {
    const std::uint64_t tp = confusion.at(c, c);
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k == c) continue;
      fp += confusion.at(k, c);
      fn += confusion.at(c, k);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    total += static_cast<double>(tp) / static_cast<double>(denom);
    ++included;
  }
  if (included == 0) {
    throw Error(ErrorKind::kUndefinedMetric, "no class occurs in truth or prediction");
  }
  return total / static_cast<double>(included);
}

std::vector<std::uint8_t> predict_labels(const Tensor& logits) {
  const std::size_t m = logits.shape().back();
  std::vector<std::uint8_t> out(logits.size() / m);
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = static_cast<std::uint8_t>(tie_broken_argmax(logits.data().subspan(j * m, m)));
  }
  return out;
}

Evaluation evaluate(const ModelWeights& weights, const LabeledBatch& dataset,
                    const std::optional<AttackConfig>& attack) {
  if (dataset.size() == 0) throw Error(ErrorKind::kInvalidArgument, "empty dataset");
  if (weights.architecture != ArchitectureId::kSegMini) {
    throw Error(ErrorKind::kInvalidArgument, "evaluation needs a segmentation model");
  }
  if (attack) attack->validate();
  const NetworkModel model(weights);
  std::vector<ConfusionMatrix> parts(dataset.size(), ConfusionMatrix(weights.class_count));
  parallel_for(dataset.size(), [&](std::size_t i) {
    Tensor x = dataset.image(i);
    const auto labels = dataset.label_map(i);
    if (attack) {
      Rng rng = Rng::stream(attack->rng_seed, stream_tag::kEval, i);
      x = run_attack(*attack, model, x, labels, rng).x_adv;
    }
    parts[i].add_maps(labels, predict_labels(evaluate_logits(model, x)));
  });
  Evaluation out{ConfusionMatrix(weights.class_count), 0.0};
  for (const ConfusionMatrix& p : parts) out.confusion.merge(p);
  out.mean_iou = mean_iou(out.confusion);
  return out;
}

std::vector<double> epsilon_grid(double eps_max, std::size_t n_points) {
  if (!(eps_max > 0.0)) throw Error(ErrorKind::kInvalidArgument, "eps_max must be > 0");
  if (n_points < 2) throw Error(ErrorKind::kInvalidArgument, "need at least 2 grid points");
  std::vector<double> grid(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    grid[i] = eps_max * static_cast<double>(i) / static_cast<double>(n_points - 1);
  }
  return grid;
}

RobustnessCurve robustness_curve(const ModelWeights& weights, const LabeledBatch& dataset,
                                 AttackFamily family, const CurveOptions& options) {
  if (family == AttackFamily::kFastNewton) {
    throw Error(ErrorKind::kInvalidArgument,
                "fast-newton picks its own radius per input and cannot be swept over epsilon");
  }
  RobustnessCurve curve;
  curve.attack.family = family;
  curve.attack.epsilon = options.eps_max;
  curve.attack.alpha = options.bim_alpha;
  curve.attack.n_steps = options.bim_steps;
  curve.attack.rng_seed = options.rng_seed;
  for (double eps : epsilon_grid(options.eps_max, options.n_points)) {
    AttackConfig config = curve.attack;
    config.epsilon = eps;
    if (family == AttackFamily::kFgsmRandom && eps == 0.0) {
      // A zero upper bound is only meaningful as the clean point.
      curve.points.push_back({eps, evaluate(weights, dataset).mean_iou});
      continue;
    }
    curve.points.push_back({eps, evaluate(weights, dataset, config).mean_iou});
  }
  return curve;
}

void RobustnessCurve::write_csv(std::ostream& out) const {
  out << "epsilon,mean_iou\n";
  for (const CurvePoint& p : points) {
    out << format_float(p.epsilon) << ',' << format_float(p.mean_iou) << '\n';
  }
}

std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace segadv
