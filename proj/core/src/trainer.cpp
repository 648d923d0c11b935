#include "bullettrain/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "bullettrain/errors.hpp"
#include "bullettrain/evaluation.hpp"
#include "bullettrain/rng.hpp"

namespace bt {

double scaled_step_size(double epsilon, std::size_t steps) {
  return steps == 0 ? 0.0 : 1.7 * epsilon / static_cast<double>(steps);
}

ComputeBudget ComputeBudget::uniform(std::size_t steps, double step_size) {
  return ComputeBudget{steps, steps, steps, step_size, step_size, step_size};
}

ComputeBudget ComputeBudget::scaled(std::size_t outlier, std::size_t robust, std::size_t boundary,
                                    double epsilon) {
  return ComputeBudget{outlier,
                       robust,
                       boundary,
                       scaled_step_size(epsilon, outlier),
                       scaled_step_size(epsilon, robust),
                       scaled_step_size(epsilon, boundary)};
}

std::size_t ComputeBudget::steps(ExampleClass c) const {
  switch (c) {
    case ExampleClass::kOutlier: return outlier_steps;
    case ExampleClass::kBoundary: return boundary_steps;
    case ExampleClass::kRobust: return robust_steps;
  }
  return 0;
}

double ComputeBudget::step_size(ExampleClass c) const {
  switch (c) {
    case ExampleClass::kOutlier: return outlier_step_size;
    case ExampleClass::kBoundary: return boundary_step_size;
    case ExampleClass::kRobust: return robust_step_size;
  }
  return 0.0;
}

void ComputeBudget::validate(bool ordered) const {
  if (ordered && !(outlier_steps <= robust_steps && robust_steps <= boundary_steps)) {
    throw ArgumentError("budget: need N_O <= N_R <= N_B, got (" + std::to_string(outlier_steps) +
                        ", " + std::to_string(robust_steps) + ", " + std::to_string(boundary_steps) + ")");
  }
  for (double a : {outlier_step_size, robust_step_size, boundary_step_size}) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ArgumentError("budget: step sizes must be >= 0");
  }
}

const char* to_string(GeneratorKind kind) noexcept {
  switch (kind) {
    case GeneratorKind::kPgd: return "pgd";
    case GeneratorKind::kFgsm: return "fgsm";
    case GeneratorKind::kAugment: return "augment";
  }
  return "?";
}

GeneratorKind generator_kind_from_string(std::string_view text) {
  if (text == "pgd") return GeneratorKind::kPgd;
  if (text == "fgsm") return GeneratorKind::kFgsm;
  if (text == "augment") return GeneratorKind::kAugment;
  throw ArgumentError("unknown generator '" + std::string(text) + "' (expected pgd, fgsm or augment)");
}

CostModel cost_model_for(GeneratorKind kind) noexcept {
  return kind == GeneratorKind::kAugment ? CostModel::kPasses : CostModel::kCriticalPath;
}

double theoretical_speedup(std::size_t baseline_steps, const ComputeBudget& budget,
                           const Fractions& fractions) {
  for (double f : {fractions.boundary, fractions.robust, fractions.outlier}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ArgumentError("theoretical_speedup: fractions must be in [0, 1]");
  }
  // Published fractions are rounded to two decimals and may sum to 0.99.
  if (std::abs(fractions.total() - 1.0) > 0.02) {
    throw ArgumentError("theoretical_speedup: fractions sum to " + std::to_string(fractions.total()));
  }
  const double spent = fractions.boundary * static_cast<double>(budget.boundary_steps) +
                       fractions.robust * static_cast<double>(budget.robust_steps) +
                       fractions.outlier * static_cast<double>(budget.outlier_steps);
  return (static_cast<double>(baseline_steps) + 1.0) / (spent + 1.0);
}

double jsd_cost_speedup(double boundary_fraction) {
  if (!(boundary_fraction >= 0.0 && boundary_fraction <= 1.0)) {
    throw ArgumentError("jsd_cost_speedup: F_B must be in [0, 1]");
  }
  return 3.0 / (1.0 + 2.0 * boundary_fraction);
}

namespace {

enum class Mode { kBaseline, kMined, kOracle };

AttackObjective objective_for(LossKind kind) {
  return kind == LossKind::kTRADES ? AttackObjective::kKlToClean : AttackObjective::kCrossEntropy;
}

void check_training_data(const Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                         const TrainConfig& config) {
  if (inputs.rows() != labels.size()) throw ArgumentError("train: label count mismatch");
  if (inputs.rows() == 0) throw ArgumentError("train: empty dataset");
  if (inputs.cols() != model.input_size()) {
    throw ArgumentError("train: inputs have " + std::to_string(inputs.cols()) +
                        " features, model expects " + std::to_string(model.input_size()));
  }
  for (Label y : labels) {
    if (y >= model.classes()) throw ArgumentError("train: label out of range");
  }
  if (config.batch_size == 0) throw ArgumentError("train: batch size must be >= 1");
  if (!(config.epsilon_warmup_epochs >= 0.0) || !std::isfinite(config.epsilon_warmup_epochs)) {
    throw ArgumentError("train: epsilon warm-up must be a finite value >= 0");
  }
  config.loss.validate();
  if (config.loss.classes != model.classes()) {
    throw ArgumentError("train: loss class count does not match the model");
  }
  if (config.generator.kind == GeneratorKind::kAugment) {
    config.generator.augment.validate(inputs.cols());
  } else {
    config.generator.attack.validate();
  }
}

class BatchRunner {
 public:
  BatchRunner(Classifier& model, const TrainConfig& config, Mode mode, const MiningConfig& mining,
              const ComputeBudget& budget)
      : model_(model), config_(config), mode_(mode), mining_(mining), budget_(budget),
        optimizer_(config.sgd) {
    state_.momentum = mining.momentum;
    state_.gamma = mining.gamma;
    if (mode_ != Mode::kBaseline) state_.validate();
  }

  Sgd& optimizer() { return optimizer_; }
  const MiningState& state() const { return state_; }
  void set_epsilon_scale(double scale) { epsilon_scale_ = scale; }

  // Returns the batch loss value.
  double run(const Tensor& x, std::span<const Label> y, std::span<const std::size_t> sample_ids,
             std::size_t epoch, StepLedger& ledger) {
    const std::size_t m = x.rows();
    Tape tape;
    Var clean = model_.forward(tape, tape.constant(x), true);
    const Tensor& clean_values = tape.value(clean);

    const std::vector<ExampleClass> classes = separate(x, y, sample_ids, epoch, clean_values);
    state_.outlier_fraction = measure_outlier_fraction(clean_values, y);

    // Corrupt each class with its own budget, B || R || O, scattering back by row.
    Tensor first = x;
    Tensor second = x;
    std::vector<bool> perturbed(m, false);
    for (ExampleClass c : {ExampleClass::kBoundary, ExampleClass::kRobust, ExampleClass::kOutlier}) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < m; ++i)
        if (classes[i] == c) rows.push_back(i);
      ledger.record_class(c, rows.size());
      const std::size_t steps = steps_for(c);
      if (rows.empty() || steps == 0) continue;
      generate(x, y, sample_ids, epoch, rows, steps, step_size_for(c), ledger, first, second);
      for (std::size_t r : rows) perturbed[r] = true;
    }

    // Forward only the perturbed rows, in original batch order.
    std::vector<CorruptedRows> groups;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < m; ++i)
      if (perturbed[i]) rows.push_back(i);
    const bool two_variants = config_.loss.kind == LossKind::kJSD;
    if (!rows.empty()) {
      CorruptedRows group;
      group.logits = model_.forward(tape, tape.constant(gather_rows(first, std::span<const std::size_t>(rows))), true);
      if (two_variants) {
        group.second_logits =
            model_.forward(tape, tape.constant(gather_rows(second, std::span<const std::size_t>(rows))), true);
      }
      group.indices = rows;
      groups.push_back(std::move(group));
    }
    Var loss = combined_bullettrain_loss(tape, clean, groups, y, config_.loss);

    if (mode_ == Mode::kMined) {
      Tensor corrupted_values = clean_values;
      if (!groups.empty()) {
        const Tensor& g = tape.value(groups.front().logits);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          auto src = g.row(r);
          std::copy(src.begin(), src.end(), corrupted_values.row(rows[r]).begin());
        }
      }
      state_ = update_robust_fraction(state_, corrupted_values, y);
    }

    ledger.clean_passes += m;
    ledger.corrupted_passes += rows.size() * (two_variants ? 2 : 1);
    ledger.update_iterations += m;

    const double value = tape.value(loss).item();
    const bool finite = std::isfinite(value);
    if (!finite || value > config_.divergence_threshold) {
      ++bad_batches_;
      if (bad_batches_ >= config_.divergence_patience) {
        std::ostringstream msg;
        msg << "training diverged: loss " << value << " at epoch " << epoch << " for "
            << bad_batches_ << " consecutive batches";
        throw DivergenceError(msg.str());
      }
      if (!finite) return value;
    } else {
      bad_batches_ = 0;
    }
    optimizer_.step(model_, tape.backward(loss));
    return value;
  }

 private:
  std::vector<ExampleClass> separate(const Tensor& x, std::span<const Label> y,
                                     std::span<const std::size_t> sample_ids, std::size_t epoch,
                                     const Tensor& clean_values) {
    switch (mode_) {
      case Mode::kBaseline:
        return std::vector<ExampleClass>(x.rows(), ExampleClass::kBoundary);
      case Mode::kMined:
        return classify_batch(signed_variances(clean_values, y), state_.robust_fraction);
      case Mode::kOracle: {
        AttackConfig attack = config_.generator.attack;
        attack.steps = mining_.oracle_steps;
        attack.step_size = mining_.oracle_step_size > 0.0
                               ? mining_.oracle_step_size
                               : scaled_step_size(attack.epsilon, mining_.oracle_steps);
        attack.epsilon *= epsilon_scale_;
        attack.step_size *= epsilon_scale_;
        std::vector<std::uint64_t> seeds(x.rows());
        for (std::size_t i = 0; i < seeds.size(); ++i) {
          seeds[i] = derive_seed({config_.seed, tag(Stream::kOracle), epoch, sample_ids[i]});
        }
        return oracle_separation(model_, x, y, attack, objective_for(config_.loss.kind), seeds);
      }
    }
    return {};
  }

  std::size_t steps_for(ExampleClass c) const {
    if (mode_ == Mode::kBaseline) {
      return config_.generator.kind == GeneratorKind::kPgd ? config_.generator.attack.steps : 1;
    }
    return budget_.steps(c);
  }

  double step_size_for(ExampleClass c) const {
    if (mode_ == Mode::kBaseline) return config_.generator.attack.step_size;
    return budget_.step_size(c);
  }

  void generate(const Tensor& x, std::span<const Label> y, std::span<const std::size_t> sample_ids,
                std::size_t epoch, const std::vector<std::size_t>& rows, std::size_t steps,
                double step_size, StepLedger& ledger, Tensor& first, Tensor& second) {
    const Tensor xs = gather_rows(x, std::span<const std::size_t>(rows));
    Labels ys(rows.size());
    std::vector<std::uint64_t> seeds(rows.size());
    const Stream stream = config_.generator.kind == GeneratorKind::kAugment ? Stream::kAugment : Stream::kAttack;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      ys[r] = y[rows[r]];
      seeds[r] = derive_seed({config_.seed, tag(stream), epoch, sample_ids[rows[r]]});
    }
    auto scatter = [&](const Tensor& src, Tensor& dst) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto s = src.row(r);
        std::copy(s.begin(), s.end(), dst.row(rows[r]).begin());
      }
    };
    switch (config_.generator.kind) {
      case GeneratorKind::kPgd: {
        AttackConfig attack = config_.generator.attack;
        attack.steps = steps;
        attack.epsilon *= epsilon_scale_;
        attack.step_size = step_size * epsilon_scale_;
        scatter(pgd_generate(model_, xs, ys, attack, objective_for(config_.loss.kind), seeds, &ledger), first);
        break;
      }
      case GeneratorKind::kFgsm: {
        AttackConfig attack = config_.generator.attack;
        attack.epsilon *= epsilon_scale_;
        scatter(fgsm_generate(model_, xs, ys, attack, objective_for(config_.loss.kind), seeds, &ledger), first);
        break;
      }
      case GeneratorKind::kAugment: {
        auto [a, b] = augment_generate(xs, config_.generator.augment, seeds, &ledger);
        scatter(a, first);
        scatter(b, second);
        break;
      }
    }
  }

  Classifier& model_;
  const TrainConfig& config_;
  Mode mode_;
  MiningConfig mining_;
  ComputeBudget budget_;
  Sgd optimizer_;
  MiningState state_;
  double epsilon_scale_ = 1.0;
  std::size_t bad_batches_ = 0;
};

TrainResult train_impl(Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                       const TrainConfig& config, Mode mode, const MiningConfig& mining,
                       const ComputeBudget& budget, const EpochCallback& on_epoch) {
  check_training_data(model, inputs, labels, config);
  BatchRunner runner(model, config, mode, mining, budget);
  TrainResult result;
  std::vector<std::size_t> order(inputs.rows());
  const std::size_t batches_per_epoch = (inputs.rows() + config.batch_size - 1) / config.batch_size;
  const double warmup_batches = config.epsilon_warmup_epochs * static_cast<double>(batches_per_epoch);
  std::size_t global_batch = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    if (std::find(config.lr_decay_epochs.begin(), config.lr_decay_epochs.end(), epoch) !=
        config.lr_decay_epochs.end()) {
      runner.optimizer().set_learning_rate(runner.optimizer().config().learning_rate *
                                           config.lr_decay_factor);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng({config.seed, tag(Stream::kShuffle), epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> ids(order.data() + start, end - start);
      const Tensor x = gather_rows(inputs, ids);
      Labels y(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) y[i] = labels[ids[i]];
      ++global_batch;
      if (warmup_batches > 0.0) {
        runner.set_epsilon_scale(std::min(1.0, static_cast<double>(global_batch) / warmup_batches));
      }
      const double loss = runner.run(x, y, ids, epoch, record.ledger);
      if (std::isfinite(loss)) {
        loss_sum += loss;
        ++batches;
      }
    }
    record.fractions = record.ledger.fractions();
    record.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    record.robust_fraction_estimate = runner.state().robust_fraction;
    record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    result.ledger += record.ledger;
    result.epochs.push_back(record);
    if (on_epoch) on_epoch(record, model);
  }
  result.final_state = runner.state();
  return result;
}

}  // namespace

TrainResult train_baseline(Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                           const TrainConfig& config, const EpochCallback& on_epoch) {
  return train_impl(model, inputs, labels, config, Mode::kBaseline, MiningConfig{}, ComputeBudget{},
                    on_epoch);
}

TrainResult train_bullettrain(Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                              const TrainConfig& config, const MiningConfig& mining,
                              const ComputeBudget& budget, const EpochCallback& on_epoch) {
  budget.validate(mining.separation == Separation::kMined);
  const Mode mode = mining.separation == Separation::kMined ? Mode::kMined : Mode::kOracle;
  return train_impl(model, inputs, labels, config, mode, mining, budget, on_epoch);
}

}  // namespace bt
