#include "segadv/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "segadv/autodiff.hpp"
#include "segadv/error.hpp"
#include "segadv/eval.hpp"
#include "segadv/loss.hpp"
#include "segadv/parallel.hpp"
#include "segadv/rng.hpp"

namespace segadv {

namespace {

struct SampleResult {
  std::vector<Tensor> grads;
  double loss = 0.0;
  bool drawn_adversarial = false;
  bool attacked = false;
  bool fallback = false;
  double newton_eps = 0.0;
  std::size_t gradient_evaluations = 0;
};

AttackFamily family_for(Regime regime) {
  switch (regime) {
    case Regime::kFgsm: return AttackFamily::kFgsm;
    case Regime::kFgsmRandom: return AttackFamily::kFgsmRandom;
    case Regime::kBim: return AttackFamily::kBim;
    case Regime::kFastNewton: return AttackFamily::kFastNewton;
    case Regime::kClean: break;
  }
  throw Error(ErrorKind::kInvalidArgument, "clean regime has no attack");
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, stream_tag::kDataOrder, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

std::string regime_name(Regime regime) {
  switch (regime) {
    case Regime::kClean: return "clean";
    case Regime::kFgsm: return "fgsm";
    case Regime::kFgsmRandom: return "fgsm-rand";
    case Regime::kBim: return "bim";
    case Regime::kFastNewton: return "fast-newton";
  }
  return "unknown";
}

Regime parse_regime(const std::string& name) {
  for (Regime r : {Regime::kClean, Regime::kFgsm, Regime::kFgsmRandom, Regime::kBim,
                   Regime::kFastNewton}) {
    if (regime_name(r) == name) return r;
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown regime '" + name + "'");
}

TrainConfig TrainConfig::for_regime(Regime regime) {
  TrainConfig c;
  c.regime = regime;
  switch (regime) {
    case Regime::kClean:
    case Regime::kFgsm:
      c.attack = {AttackFamily::kFgsm, 0.03, 0.01, 1, 0};
      break;
    case Regime::kFgsmRandom:
      c.attack = {AttackFamily::kFgsmRandom, 0.03, 0.01, 1, 0};
      break;
    case Regime::kBim:
      c.attack = {AttackFamily::kBim, 0.03, 0.01, 3, 0};
      break;
    case Regime::kFastNewton:
      c.attack = {AttackFamily::kFastNewton, 0.0, 0.01, 1, 0};
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::kInvalidArgument, what);
  };
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch size must be >= 1");
  require(base_lr >= 0.0 && std::isfinite(base_lr), "base_lr must be finite and >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "weight decay must be >= 0");
  require(adv_probability >= 0.0 && adv_probability <= 1.0, "adv_probability must be in [0, 1]");
  if (regime != Regime::kClean) {
    require(attack.family == family_for(regime), "attack family does not match the regime");
    attack.validate();
  }
}

double poly_lr(std::size_t step, std::size_t total_steps, double base_lr, double power) {
  if (total_steps == 0) throw Error(ErrorKind::kInvalidArgument, "total_steps must be > 0");
  if (step > total_steps) throw Error(ErrorKind::kInvalidArgument, "step beyond total_steps");
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * std::pow(1.0 - progress, power);
}

void sgd_step(ModelWeights& weights, const std::vector<Tensor>& grads,
              std::vector<Tensor>& velocity, double lr, double momentum, double weight_decay) {
  if (grads.size() != weights.layers.size() || velocity.size() != weights.layers.size()) {
    throw Error(ErrorKind::kShapeMismatch, "gradient/velocity count differs from layer count");
  }
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    Tensor& w = weights.layers[l].value;
    Tensor& v = velocity[l];
    const Tensor& g = grads[l];
    if (g.shape() != w.shape() || v.shape() != w.shape()) {
      throw Error(ErrorKind::kShapeMismatch, "layer " + weights.layers[l].name + ": gradient " +
                                                 shape_string(g.shape()) + " for weight " +
                                                 shape_string(w.shape()));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
      w[i] -= lr * v[i];
    }
  }
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "epoch,mean_loss,clean_miou,mean_newton_eps\n";
  for (const EpochRecord& r : epochs) {
    out << r.epoch << ',' << format_float(r.mean_loss) << ',' << format_float(r.clean_miou) << ','
        << format_float(r.mean_newton_eps) << '\n';
  }
}

double dataset_loss(const ModelWeights& weights, const LabeledBatch& dataset) {
  std::vector<double> losses(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    losses[i] = loss_ce_ignore(logits(weights, dataset.image(i)), dataset.label_map(i));
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(dataset.size());
}

TrainResult train(const TrainConfig& config, const LabeledBatch& dataset,
                  const LabeledBatch& validation, ModelWeights initial, const TrainHooks& hooks) {
  config.validate();
  if (dataset.size() == 0) throw Error(ErrorKind::kInvalidArgument, "empty training set");
  initial.validate();
  if (initial.architecture != ArchitectureId::kSegMini ||
      initial.class_count != dataset.class_count) {
    throw Error(ErrorKind::kInvalidArgument, "training needs a SegMini model matching the dataset");
  }
  const LabeledBatch& held_out = validation.size() ? validation : dataset;

  TrainResult result{std::move(initial), {}};
  ModelWeights& weights = result.weights;
  std::vector<Tensor> velocity;
  for (const Layer& l : weights.layers) velocity.emplace_back(l.value.shape());

  const std::size_t n = dataset.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  AttackConfig attack = config.attack;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(config.rng_seed, epoch, n);
    double loss_sum = 0.0;
    double newton_sum = 0.0;
    std::size_t newton_count = 0;

    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t count = std::min(config.batch_size, n - begin);
      std::vector<SampleResult> samples(count);
      const NetworkModel frozen(weights);

      parallel_for(count, [&](std::size_t k) {
        SampleResult& s = samples[k];
        const std::size_t index = order[begin + k];
        const std::uint64_t draw = epoch * n + begin + k;
        Tensor clean = dataset.image(index);
        const auto label_span = dataset.label_map(index);
        std::vector<std::uint8_t> labels(label_span.begin(), label_span.end());
        if (config.horizontal_flip) {
          Rng aug = Rng::stream(config.rng_seed, stream_tag::kAugment, draw);
          if (aug.bernoulli(0.5)) flip_horizontal(clean, labels);
        }
        Tensor x = clean;
        if (config.regime != Regime::kClean) {
          Rng mix = Rng::stream(config.rng_seed, stream_tag::kMix, draw);
          s.drawn_adversarial = mix.bernoulli(config.adv_probability);
        }
        if (s.drawn_adversarial) {
          Rng eps_rng = Rng::stream(config.rng_seed, stream_tag::kRandomEps, draw);
          s.attacked = true;
          try {
            AdversarialExample adv = run_attack(attack, frozen, clean, labels, eps_rng);
            s.gradient_evaluations = adv.gradient_evaluations;
            s.newton_eps = adv.step_size_used;
            x = std::move(adv.x_adv);
          } catch (const Error&) {
            s.fallback = true;
          }
        }
        if (hooks.on_sample) hooks.on_sample(clean, x, s.drawn_adversarial && !s.fallback);

        Tape tape;
        const auto params = bind_params(tape, weights, true);
        Var loss = softmax_cross_entropy(
            network_logits(weights.architecture, params, tape.constant(x)), labels);
        s.loss = loss.value().item();
        GradientResult g = tape.backward(loss);
        s.grads.reserve(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
          s.grads.push_back(std::move(g.wrt_params.at(p)));
        }
      });

      std::vector<Tensor> grads;
      for (const Layer& l : weights.layers) grads.emplace_back(l.value.shape());
      const double inv = 1.0 / static_cast<double>(count);
      for (const SampleResult& s : samples) {
        for (std::size_t p = 0; p < grads.size(); ++p) {
          for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += s.grads[p][i] * inv;
        }
        loss_sum += s.loss;
        auto& c = result.log.counters;
        ++c.samples;
        c.adversarial_draws += s.drawn_adversarial;
        c.attack_invocations += s.attacked;
        c.attack_fallbacks += s.fallback;
        c.attack_gradient_evaluations += s.gradient_evaluations;
        if (config.regime == Regime::kFastNewton && s.drawn_adversarial && !s.fallback) {
          newton_sum += s.newton_eps;
          ++newton_count;
        }
      }
      const double lr = poly_lr(step, total_steps, config.base_lr, config.lr_power);
      sgd_step(weights, grads, velocity, lr, config.momentum, config.weight_decay);
      ++step;
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.mean_loss = loss_sum / static_cast<double>(n);
    record.clean_miou = evaluate(weights, held_out).mean_iou;
    record.mean_newton_eps = newton_count ? newton_sum / static_cast<double>(newton_count)
                                          : std::numeric_limits<double>::quiet_NaN();
    result.log.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(epoch + 1, weights);
  }
  return result;
}

}  // namespace segadv
