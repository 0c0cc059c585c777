#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "segadv/attacks.hpp"
#include "segadv/data.hpp"
#include "segadv/models.hpp"

namespace segadv {

enum class Regime : std::uint8_t { kClean, kFgsm, kFgsmRandom, kBim, kFastNewton };

std::string regime_name(Regime regime);
/// Accepts clean, fgsm, fgsm-rand, bim, fast-newton.
Regime parse_regime(const std::string& name);

struct TrainConfig {
  Regime regime = Regime::kClean;
  AttackConfig attack;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double base_lr = 0.01;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double adv_probability = 0.5;
  bool horizontal_flip = true;
  std::uint64_t rng_seed = 0;

  /// Optimizer defaults plus the regime's attack: FGSM at 0.03, random-radius
  /// FGSM up to 0.03, BIM with alpha 0.01 / epsilon 0.03 / 3 steps, and the
  /// parameter-free Fast Newton step.
  static TrainConfig for_regime(Regime regime);
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  /// Mean IoU of the weights after this epoch on the held-out split.
  double clean_miou = 0.0;
  /// Mean realized Newton radius over adversarial samples; NaN otherwise.
  double mean_newton_eps = 0.0;
};

struct TrainCounters {
  std::uint64_t samples = 0;
  std::uint64_t adversarial_draws = 0;
  std::uint64_t attack_invocations = 0;
  std::uint64_t attack_gradient_evaluations = 0;
  /// Adversarial draws whose attack failed; those samples trained clean.
  std::uint64_t attack_fallbacks = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  TrainCounters counters;

  /// Header `epoch,mean_loss,clean_miou,mean_newton_eps`, 17 significant digits.
  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  ModelWeights weights;
  TrainLog log;
};

/// base_lr * (1 - step / total_steps)^power.
double poly_lr(std::size_t step, std::size_t total_steps, double base_lr, double power);

/// v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v.
void sgd_step(ModelWeights& weights, const std::vector<Tensor>& grads,
              std::vector<Tensor>& velocity, double lr, double momentum, double weight_decay);

struct TrainHooks {
  /// Called after each epoch with the current weights.
  std::function<void(std::size_t epoch, const ModelWeights&)> on_epoch;
  /// Called with every training input actually fed to the network (after
  /// augmentation and any attack) together with its clean source image.
  std::function<void(const Tensor& clean, const Tensor& used, bool adversarial)> on_sample;
};

/// Adversarial training: each sample is independently replaced, with
/// probability adv_probability, by an attack on the current weights; the
/// batch gradient is the mean of per-sample loss gradients; SGD with
/// momentum, weight decay and per-step polynomial decay. Deterministic in
/// config.rng_seed. `validation` feeds the per-epoch clean mean IoU; when it
/// is empty the training set is used.
TrainResult train(const TrainConfig& config, const LabeledBatch& dataset,
                  const LabeledBatch& validation, ModelWeights initial,
                  const TrainHooks& hooks = {});

/// Mean cross-entropy of the weights over a whole dataset, no augmentation.
double dataset_loss(const ModelWeights& weights, const LabeledBatch& dataset);

}  // namespace segadv
