#include "segadv/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <utility>

#include "binary_io.hpp"
#include "segadv/data.hpp"
#include "segadv/digest.hpp"
#include "segadv/error.hpp"
#include "segadv/eval.hpp"
#include "segadv/gradcheck.hpp"
#include "segadv/models.hpp"
#include "segadv/training.hpp"

namespace segadv::cli {

void Manifest::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos ||
      value.find('\n') != std::string::npos) {
    throw Error(ErrorKind::kInvalidArgument, "manifest entry '" + key + "' is not representable");
  }
  entries_[key] = value;
}

bool Manifest::contains(const std::string& key) const { return entries_.contains(key); }

const std::string& Manifest::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw Error(ErrorKind::kInvalidArgument, "manifest has no '" + key + "' entry");
  }
  return it->second;
}

std::string Manifest::encode() const {
  std::string text;
  for (const auto& [key, value] : entries_) text += key + '=' + value + '\n';
  return text;
}

Manifest Manifest::decode(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorKind::kInvalidArgument,
                  "manifest line " + std::to_string(number) + " is not key=value");
    }
    m.entries_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

std::string manifest_path(const std::string& output_path) { return output_path + ".manifest"; }

namespace {

std::uint64_t parse_u64(const Manifest& m, const std::string& key) {
  const std::string& text = m.get(key);
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text.front() == '-') {
    throw Error(ErrorKind::kInvalidArgument, "manifest '" + key + "' is not an unsigned integer");
  }
  return v;
}

double parse_double(const Manifest& m, const std::string& key) {
  const std::string& text = m.get(key);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw Error(ErrorKind::kInvalidArgument, "manifest '" + key + "' is not a number");
  }
  return v;
}

bool parse_bool(const Manifest& m, const std::string& key) {
  const std::string& text = m.get(key);
  if (text == "true") return true;
  if (text == "false") return false;
  throw Error(ErrorKind::kInvalidArgument, "manifest '" + key + "' is not true/false");
}

std::string file_digest(const std::string& path) { return sha256_hex(detail::read_file(path)); }

// A path a command reads or writes, addressable by a stable manifest key.
struct FileSlot {
  std::string key;
  std::string* path;
};

class Job {
 public:
  virtual ~Job() = default;
  virtual std::string command() const = 0;
  virtual void describe(Manifest& m) const = 0;
  virtual std::vector<FileSlot> inputs() { return {}; }
  virtual std::vector<FileSlot> outputs() = 0;
  /// Runs the command and returns its exit code; throws on runtime failure.
  virtual int execute(std::ostream& out) = 0;
};

class GenDataJob final : public Job {
 public:
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::string out_path;

  std::string command() const override { return "gen-data"; }
  void describe(Manifest& m) const override {
    m.set("seed", std::to_string(seed));
    m.set("n", std::to_string(n));
    m.set("out", out_path);
  }
  static std::unique_ptr<GenDataJob> from(const Manifest& m) {
    auto job = std::make_unique<GenDataJob>();
    job->seed = parse_u64(m, "seed");
    job->n = parse_u64(m, "n");
    job->out_path = m.get("out");
    return job;
  }
  std::vector<FileSlot> outputs() override { return {{"out", &out_path}}; }
  int execute(std::ostream& out) override {
    const LabeledBatch batch = generate_shapes(seed, n);
    save_dataset(batch, out_path);
    out << sha256_hex(dataset_payload(batch)) << '\n';
    return kExitOk;
  }
};

class TrainJob final : public Job {
 public:
  TrainConfig config;
  std::uint64_t init_seed = 0;
  std::string data_path;
  std::string val_path;
  std::string weights_path;
  std::string log_path;

  std::string command() const override { return "train"; }
  void describe(Manifest& m) const override {
    m.set("regime", regime_name(config.regime));
    m.set("data", data_path);
    m.set("val", val_path);
    m.set("out_weights", weights_path);
    m.set("out_log", log_path);
    m.set("init.architecture", architecture_name(ArchitectureId::kSegMini));
    m.set("init.seed", std::to_string(init_seed));
    m.set("epochs", std::to_string(config.epochs));
    m.set("batch_size", std::to_string(config.batch_size));
    m.set("base_lr", format_float(config.base_lr));
    m.set("lr_power", format_float(config.lr_power));
    m.set("momentum", format_float(config.momentum));
    m.set("weight_decay", format_float(config.weight_decay));
    m.set("adv_probability", format_float(config.adv_probability));
    m.set("horizontal_flip", config.horizontal_flip ? "true" : "false");
    m.set("rng_seed", std::to_string(config.rng_seed));
    m.set("attack.family", attack_family_name(config.attack.family));
    m.set("attack.epsilon", format_float(config.attack.epsilon));
    m.set("attack.alpha", format_float(config.attack.alpha));
    m.set("attack.n_steps", std::to_string(config.attack.n_steps));
    m.set("attack.rng_seed", std::to_string(config.attack.rng_seed));
  }
  static std::unique_ptr<TrainJob> from(const Manifest& m) {
    auto job = std::make_unique<TrainJob>();
    TrainConfig& c = job->config;
    c.regime = parse_regime(m.get("regime"));
    job->data_path = m.get("data");
    job->val_path = m.get("val");
    job->weights_path = m.get("out_weights");
    job->log_path = m.get("out_log");
    if (m.get("init.architecture") != architecture_name(ArchitectureId::kSegMini)) {
      throw Error(ErrorKind::kInvalidArgument, "train replays only support SegMini");
    }
    job->init_seed = parse_u64(m, "init.seed");
    c.epochs = parse_u64(m, "epochs");
    c.batch_size = parse_u64(m, "batch_size");
    c.base_lr = parse_double(m, "base_lr");
    c.lr_power = parse_double(m, "lr_power");
    c.momentum = parse_double(m, "momentum");
    c.weight_decay = parse_double(m, "weight_decay");
    c.adv_probability = parse_double(m, "adv_probability");
    c.horizontal_flip = parse_bool(m, "horizontal_flip");
    c.rng_seed = parse_u64(m, "rng_seed");
    c.attack.family = parse_attack_family(m.get("attack.family"));
    c.attack.epsilon = parse_double(m, "attack.epsilon");
    c.attack.alpha = parse_double(m, "attack.alpha");
    c.attack.n_steps = parse_u64(m, "attack.n_steps");
    c.attack.rng_seed = parse_u64(m, "attack.rng_seed");
    c.validate();
    return job;
  }
  std::vector<FileSlot> inputs() override {
    std::vector<FileSlot> slots{{"data", &data_path}};
    if (!val_path.empty()) slots.push_back({"val", &val_path});
    return slots;
  }
  std::vector<FileSlot> outputs() override {
    return {{"out_weights", &weights_path}, {"out_log", &log_path}};
  }
  int execute(std::ostream& out) override {
    const LabeledBatch data = load_dataset(data_path);
    const LabeledBatch val = val_path.empty() ? LabeledBatch{} : load_dataset(val_path);
    ModelWeights initial = build(ArchitectureId::kSegMini, data.class_count, init_seed);
    const TrainResult result = train(config, data, val, std::move(initial));

    save_weights(result.weights, weights_path);
    std::ostringstream csv;
    result.log.write_csv(csv);
    detail::write_file(log_path, csv.str());

    for (const EpochRecord& e : result.log.epochs) {
      out << "epoch " << e.epoch << " loss " << format_float(e.mean_loss) << " clean_miou "
          << format_float(e.clean_miou);
      if (config.regime == Regime::kFastNewton) out << " newton_eps " << format_float(e.mean_newton_eps);
      out << '\n';
    }
    const TrainCounters& k = result.log.counters;
    out << "samples " << k.samples << " adversarial " << k.adversarial_draws
        << " attack_gradients " << k.attack_gradient_evaluations << " fallbacks "
        << k.attack_fallbacks << '\n';
    return kExitOk;
  }
};

class CurveJob final : public Job {
 public:
  AttackFamily family = AttackFamily::kFgsm;
  CurveOptions options;
  std::string weights_path;
  std::string data_path;
  std::string out_path;

  std::string command() const override { return "curve"; }
  void describe(Manifest& m) const override {
    m.set("weights", weights_path);
    m.set("data", data_path);
    m.set("out", out_path);
    m.set("attack", attack_family_name(family));
    m.set("eps_max", format_float(options.eps_max));
    m.set("points", std::to_string(options.n_points));
    m.set("bim_alpha", format_float(options.bim_alpha));
    m.set("bim_steps", std::to_string(options.bim_steps));
    m.set("rng_seed", std::to_string(options.rng_seed));
  }
  static std::unique_ptr<CurveJob> from(const Manifest& m) {
    auto job = std::make_unique<CurveJob>();
    job->weights_path = m.get("weights");
    job->data_path = m.get("data");
    job->out_path = m.get("out");
    job->family = parse_attack_family(m.get("attack"));
    job->options.eps_max = parse_double(m, "eps_max");
    job->options.n_points = parse_u64(m, "points");
    job->options.bim_alpha = parse_double(m, "bim_alpha");
    job->options.bim_steps = parse_u64(m, "bim_steps");
    job->options.rng_seed = parse_u64(m, "rng_seed");
    return job;
  }
  std::vector<FileSlot> inputs() override {
    return {{"weights", &weights_path}, {"data", &data_path}};
  }
  std::vector<FileSlot> outputs() override { return {{"out", &out_path}}; }
  int execute(std::ostream& out) override {
    const ModelWeights weights = load_weights(weights_path);
    const LabeledBatch data = load_dataset(data_path);
    const RobustnessCurve curve = robustness_curve(weights, data, family, options);
    std::ostringstream csv;
    curve.write_csv(csv);
    detail::write_file(out_path, csv.str());
    out << csv.str();
    return kExitOk;
  }
};

class GradcheckJob final : public Job {
 public:
  std::uint64_t seed = 0;
  std::string out_path;

  std::string command() const override { return "gradcheck"; }
  void describe(Manifest& m) const override {
    m.set("seed", std::to_string(seed));
    m.set("out", out_path);
  }
  static std::unique_ptr<GradcheckJob> from(const Manifest& m) {
    auto job = std::make_unique<GradcheckJob>();
    job->seed = parse_u64(m, "seed");
    job->out_path = m.get("out");
    return job;
  }
  std::vector<FileSlot> outputs() override {
    if (out_path.empty()) return {};
    return {{"out", &out_path}};
  }
  int execute(std::ostream& out) override {
    std::ostringstream report;
    bool all_passed = true;
    for (const OpCheck& check : gradcheck_suite(seed)) {
      report << check.name << ' ' << check.report.summary() << '\n';
      all_passed = all_passed && check.report.passed;
    }
    report << "gradcheck " << (all_passed ? "PASS" : "FAIL") << '\n';
    if (!out_path.empty()) detail::write_file(out_path, report.str());
    out << report.str();
    return all_passed ? kExitOk : kExitCheckFailed;
  }
};

std::unique_ptr<Job> job_from_manifest(const Manifest& m) {
  const std::string& command = m.get("command");
  if (command == "gen-data") return GenDataJob::from(m);
  if (command == "train") return TrainJob::from(m);
  if (command == "curve") return CurveJob::from(m);
  if (command == "gradcheck") return GradcheckJob::from(m);
  throw Error(ErrorKind::kInvalidArgument, "manifest command '" + command + "' is unknown");
}

// Runs a freshly parsed job and records its manifest next to the first output.
int run_and_record(Job& job, std::ostream& out) {
  const int code = job.execute(out);
  const auto outputs = job.outputs();
  if (outputs.empty()) return code;

  Manifest m;
  m.set("command", job.command());
  job.describe(m);
  for (const FileSlot& slot : job.inputs()) m.set("sha256.input." + slot.key, file_digest(*slot.path));
  for (const FileSlot& slot : outputs) m.set("sha256.output." + slot.key, file_digest(*slot.path));
  detail::write_file(manifest_path(*outputs.front().path), m.encode());
  return code;
}

int replay(const std::string& path, const std::string& out_dir, std::ostream& out,
           std::ostream& err) {
  const Manifest m = Manifest::decode(detail::read_file(path));
  std::unique_ptr<Job> job = job_from_manifest(m);

  for (const FileSlot& slot : job->inputs()) {
    const std::string key = "sha256.input." + slot.key;
    if (m.contains(key) && file_digest(*slot.path) != m.get(key)) {
      err << "input " << *slot.path << " changed since the manifest was written\n";
      return kExitRuntime;
    }
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    for (FileSlot& slot : job->outputs()) {
      *slot.path = (std::filesystem::path(out_dir) / std::filesystem::path(*slot.path).filename()).string();
    }
  }

  std::ostringstream discard;
  const int code = job->execute(discard);
  bool identical = true;
  for (const FileSlot& slot : job->outputs()) {
    const std::string key = "sha256.output." + slot.key;
    const bool same = file_digest(*slot.path) == m.get(key);
    identical = identical && same;
    out << (same ? "identical " : "differs ") << *slot.path << '\n';
  }
  if (!identical) return kExitCheckFailed;
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial training experiments for small segmentation models", "segadv"};
  app.require_subcommand(1);

  auto gen = std::make_unique<GenDataJob>();
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  gen_cmd->add_option("--seed", gen->seed, "Generator seed")->required();
  gen_cmd->add_option("--n", gen->n, "Number of images")->required();
  gen_cmd->add_option("--out", gen->out_path, "Dataset file to write")->required();

  auto tr = std::make_unique<TrainJob>();
  std::string regime;
  std::optional<double> eps;
  std::size_t epochs = TrainConfig{}.epochs;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train SegMini under one regime");
  train_cmd->add_option("--regime", regime, "clean, fgsm, fgsm-rand, bim or fast-newton")->required();
  train_cmd->add_option("--data", tr->data_path, "Training dataset")->required();
  train_cmd->add_option("--val", tr->val_path, "Held-out dataset for the clean_miou column");
  train_cmd->add_option("--epochs", epochs, "Training epochs");
  train_cmd->add_option("--seed", train_seed, "Seed for initialization and training randomness");
  train_cmd->add_option("--eps", eps, "Attack radius (not for clean or fast-newton)");
  train_cmd->add_option("--out-weights", tr->weights_path, "Weights file to write")->required();
  train_cmd->add_option("--out-log", tr->log_path, "Training log CSV to write")->required();

  auto cv = std::make_unique<CurveJob>();
  std::string attack;
  auto* curve_cmd = app.add_subcommand("curve", "Mean IoU over a sweep of attack radii");
  curve_cmd->add_option("--weights", cv->weights_path, "Weights file")->required();
  curve_cmd->add_option("--data", cv->data_path, "Evaluation dataset")->required();
  curve_cmd->add_option("--attack", attack, "fgsm or bim")->required();
  curve_cmd->add_option("--eps-max", cv->options.eps_max, "Largest radius");
  curve_cmd->add_option("--points", cv->options.n_points, "Grid points including 0");
  curve_cmd->add_option("--out", cv->out_path, "Curve CSV to write")->required();

  auto gc = std::make_unique<GradcheckJob>();
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  grad_cmd->add_option("--seed", gc->seed, "Seed for the random probe inputs");
  grad_cmd->add_option("--out", gc->out_path, "Report file to write");

  std::string manifest_file;
  std::string out_dir;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run a manifest and compare its outputs");
  replay_cmd->add_option("--manifest", manifest_file, "Manifest sidecar")->required();
  replay_cmd->add_option("--out-dir", out_dir, "Write outputs here instead of their original paths");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::unique_ptr<Job> job;
  try {
    if (*gen_cmd) {
      if (gen->n == 0) throw Error(ErrorKind::kInvalidArgument, "--n must be at least 1");
      job = std::move(gen);
    } else if (*train_cmd) {
      tr->config = TrainConfig::for_regime(parse_regime(regime));
      tr->config.epochs = epochs;
      tr->config.rng_seed = train_seed;
      tr->config.attack.rng_seed = train_seed;
      tr->init_seed = train_seed;
      if (eps) {
        if (tr->config.regime == Regime::kClean || tr->config.regime == Regime::kFastNewton) {
          throw Error(ErrorKind::kInvalidArgument,
                      "--eps does not apply to regime " + regime_name(tr->config.regime));
        }
        tr->config.attack.epsilon = *eps;
      }
      tr->config.validate();
      job = std::move(tr);
    } else if (*curve_cmd) {
      cv->family = parse_attack_family(attack);
      if (cv->family == AttackFamily::kFastNewton) {
        throw Error(ErrorKind::kInvalidArgument,
                    "fast-newton picks its own radius per input and cannot be swept over epsilon");
      }
      if (cv->family != AttackFamily::kFgsm && cv->family != AttackFamily::kBim) {
        throw Error(ErrorKind::kInvalidArgument, "curve supports fgsm and bim");
      }
      if (!(cv->options.eps_max > 0.0) || cv->options.n_points < 2) {
        throw Error(ErrorKind::kInvalidArgument, "--eps-max must be positive and --points at least 2");
      }
      job = std::move(cv);
    } else if (*grad_cmd) {
      job = std::move(gc);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*replay_cmd) return replay(manifest_file, out_dir, out, err);
    return run_and_record(*job, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace segadv::cli
