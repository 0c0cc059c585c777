#include <doctest.h>

#include <set>
#include <sstream>

#include "segadv/eval.hpp"
#include "segadv/training.hpp"
#include "support.hpp"

using namespace segadv;
using segadv::testing::random_labels;
using segadv::testing::thrown_kind;

namespace {

// Per-class intersection over union from pixel index sets.
double set_oracle_miou(const std::vector<std::uint8_t>& truth, const std::vector<std::uint8_t>& pred,
                       std::size_t classes) {
  double total = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::set<std::size_t> g, p;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == kIgnoreLabel) continue;
      if (truth[i] == c) g.insert(i);
      if (pred[i] == c) p.insert(i);
    }
    std::set<std::size_t> both, either = g;
    for (std::size_t i : p) {
      if (g.contains(i)) both.insert(i);
      either.insert(i);
    }
    if (either.empty()) continue;
    total += static_cast<double>(both.size()) / static_cast<double>(either.size());
    ++included;
  }
  return total / static_cast<double>(included);
}

// A small clean model shared by the evaluation tests.
const ModelWeights& reference_model() {
  static const ModelWeights w = [] {
    const LabeledBatch data = generate_shapes(31, 96);
    TrainConfig c = TrainConfig::for_regime(Regime::kClean);
    c.epochs = 8;
    c.rng_seed = 4;
    return train(c, data, {}, build(ArchitectureId::kSegMini, 4, 2)).weights;
  }();
  return w;
}

}  // namespace

TEST_CASE("mean IoU examples") {
  ConfusionMatrix perfect(3);
  perfect.add_maps(std::vector<std::uint8_t>{0, 1, 2, 2}, std::vector<std::uint8_t>{0, 1, 2, 2});
  CHECK(mean_iou(perfect) == 1.0);

  ConfusionMatrix m(2);
  m.add_maps(std::vector<std::uint8_t>{0, 0, 1, 1}, std::vector<std::uint8_t>{0, 1, 1, 1});
  CHECK(mean_iou(m) == doctest::Approx(7.0 / 12.0).epsilon(1e-15));

  // Class 2 is absent everywhere and must not dilute the mean.
  ConfusionMatrix absent(3);
  absent.add_maps(std::vector<std::uint8_t>{0, 0, 1, 1}, std::vector<std::uint8_t>{0, 1, 1, 1});
  CHECK(mean_iou(absent) == mean_iou(m));

  CHECK(thrown_kind([] { mean_iou(ConfusionMatrix(3)); }) == ErrorKind::kUndefinedMetric);
}

TEST_CASE("confusion matrix accounting") {
  ConfusionMatrix m(3);
  m.add_maps(std::vector<std::uint8_t>{0, kIgnoreLabel, 2, 1}, std::vector<std::uint8_t>{1, 0, 2, 1});
  CHECK(m.total() == 3);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(2, 2) == 1);
  ConfusionMatrix other(3);
  other.add(1, 0, 4);
  m.merge(other);
  CHECK(m.at(1, 0) == 4);
  CHECK(m.total() == 7);
  CHECK_THROWS_AS(m.merge(ConfusionMatrix(2)), Error);
  CHECK_THROWS_AS(m.add(3, 0), Error);
}

TEST_CASE("mean IoU equals a brute-force set oracle") {
  Rng rng(1234);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + rng.below(4);
    const std::size_t n = (1 + rng.below(8)) * (1 + rng.below(8));
    // Restrict both maps to a random subset of classes so some are absent.
    const std::size_t used = 1 + rng.below(classes);
    auto truth = random_labels(rng, n, used, 0.2);
    auto pred = random_labels(rng, n, used);
    truth[0] = static_cast<std::uint8_t>(rng.below(used));
    ConfusionMatrix m(classes);
    m.add_maps(truth, pred);
    CHECK(mean_iou(m) == set_oracle_miou(truth, pred, classes));
  }
}

TEST_CASE("predictions break ties toward the lowest class") {
  const Tensor z(Shape{3, 3}, std::vector<double>{1, 1, 0, 0, 2, 2, 5, -1, 5});
  CHECK(predict_labels(z) == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("evaluation contracts") {
  const ModelWeights& w = reference_model();
  const LabeledBatch data = generate_shapes(32, 12);
  const Evaluation clean = evaluate(w, data);
  CHECK(clean.confusion.total() == data.labeled_pixel_count());
  CHECK(evaluate(w, data).confusion == clean.confusion);

  AttackConfig zero;
  zero.family = AttackFamily::kFgsm;
  zero.epsilon = 0.0;
  const Evaluation attacked = evaluate(w, data, zero);
  CHECK(attacked.confusion == clean.confusion);
  CHECK(attacked.mean_iou == clean.mean_iou);

  AttackConfig rand;
  rand.family = AttackFamily::kFgsmRandom;
  rand.epsilon = 0.03;
  rand.rng_seed = 5;
  CHECK(evaluate(w, data, rand).confusion == evaluate(w, data, rand).confusion);

  CHECK_THROWS_AS(evaluate(build(ArchitectureId::kClassMini, 4, 1), data), Error);
}

TEST_CASE("epsilon grid") {
  const auto grid = epsilon_grid(0.04, 9);
  REQUIRE(grid.size() == 9);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 0.04);
  for (std::size_t i = 0; i < 9; ++i) CHECK(grid[i] == doctest::Approx(0.005 * i).epsilon(1e-15));
  for (std::size_t i = 1; i < 9; ++i) CHECK(grid[i] > grid[i - 1]);
  CHECK_THROWS_AS(epsilon_grid(0.0, 9), Error);
  CHECK_THROWS_AS(epsilon_grid(0.04, 1), Error);
}

TEST_CASE("robustness curves") {
  const ModelWeights& w = reference_model();
  const LabeledBatch data = generate_shapes(33, 8);
  const double clean = evaluate(w, data).mean_iou;

  const RobustnessCurve fgsm = robustness_curve(w, data, AttackFamily::kFgsm);
  REQUIRE(fgsm.points.size() == 9);
  CHECK(fgsm.points[0].epsilon == 0.0);
  CHECK(fgsm.points[0].mean_iou == clean);

  CurveOptions two;
  two.n_points = 2;
  const auto before = backward_pass_count();
  const RobustnessCurve bim = robustness_curve(w, data, AttackFamily::kBim, two);
  CHECK(backward_pass_count() - before == 2 * 10 * data.size());
  CHECK(bim.points[0].mean_iou == clean);

  CHECK(thrown_kind([&] { robustness_curve(w, data, AttackFamily::kFastNewton); }) ==
        ErrorKind::kInvalidArgument);

  std::ostringstream a, b;
  fgsm.write_csv(a);
  robustness_curve(w, data, AttackFamily::kFgsm).write_csv(b);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("epsilon,mean_iou\n0,", 0) == 0);
  CHECK(a.str().find("\n0.0050000000000000001,") != std::string::npos);
}

TEST_CASE("bim is at least as strong as fgsm on a trained model") {
  const ModelWeights& w = reference_model();
  const LabeledBatch data = generate_shapes(34, 16);
  const auto fgsm = robustness_curve(w, data, AttackFamily::kFgsm);
  const auto bim = robustness_curve(w, data, AttackFamily::kBim);
  int within = 0;
  for (std::size_t i = 0; i < 9; ++i) within += bim.points[i].mean_iou <= fgsm.points[i].mean_iou + 0.02;
  CHECK(within >= 7);
}

TEST_CASE("float formatting keeps 17 significant digits") {
  CHECK(format_float(0.1) == "0.10000000000000001");
  CHECK(format_float(0.0) == "0");
  CHECK(std::stod(format_float(1.0 / 3.0)) == 1.0 / 3.0);
}
