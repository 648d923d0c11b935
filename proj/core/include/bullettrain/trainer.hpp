#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bullettrain/corruption.hpp"
#include "bullettrain/ledger.hpp"
#include "bullettrain/losses.hpp"
#include "bullettrain/mining.hpp"
#include "bullettrain/model.hpp"

namespace bt {

/// Generation steps and step sizes per example class.
struct ComputeBudget {
  std::size_t outlier_steps = 0;
  std::size_t robust_steps = 2;
  std::size_t boundary_steps = 10;
  double outlier_step_size = 0.0;
  double robust_step_size = 0.0;
  double boundary_step_size = 0.007;

  // Every class gets `steps` iterations of size `step_size`.
  static ComputeBudget uniform(std::size_t steps, double step_size);
  // Step size 1.7*epsilon/N for every class with N > 0 steps.
  static ComputeBudget scaled(std::size_t outlier, std::size_t robust, std::size_t boundary,
                              double epsilon);

  std::size_t steps(ExampleClass c) const;
  double step_size(ExampleClass c) const;

  // `ordered` enforces N_O <= N_R <= N_B.
  void validate(bool ordered = true) const;
};

/// 1.7 * epsilon / steps, or 0 when steps == 0.
double scaled_step_size(double epsilon, std::size_t steps);

enum class GeneratorKind { kPgd, kFgsm, kAugment };

const char* to_string(GeneratorKind kind) noexcept;
GeneratorKind generator_kind_from_string(std::string_view text);

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::kPgd;
  AttackConfig attack;  // steps/step_size are the baseline N and alpha
  AugmentConfig augment;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  SgdConfig sgd;
  std::vector<std::size_t> lr_decay_epochs;  // multiply lr by lr_decay_factor at these epochs
  double lr_decay_factor = 0.1;
  LossConfig loss;
  GeneratorConfig generator;
  // Attack epsilon and step sizes grow linearly over this many epochs
  // (per batch) before reaching their configured values. 0 disables.
  double epsilon_warmup_epochs = 0.0;
  double divergence_threshold = 1e6;
  std::size_t divergence_patience = 3;
};

enum class Separation {
  kMined,   // signed prediction variance + F_R estimate
  kOracle,  // full-N attack per batch (leave-one-out studies)
};

struct MiningConfig {
  double momentum = 0.9;
  double gamma = 0.8;
  Separation separation = Separation::kMined;
  std::size_t oracle_steps = 10;
  double oracle_step_size = 0.0;  // 0 selects 1.7*epsilon/oracle_steps
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  StepLedger ledger;      // work done in this epoch only
  Fractions fractions;
  double mean_loss = 0.0;
  double robust_fraction_estimate = 0.0;  // F_R at the end of the epoch
  double wall_ms = 0.0;
};

struct TrainResult {
  StepLedger ledger;
  std::vector<EpochRecord> epochs;
  MiningState final_state;
};

// Invoked after every epoch with the updated model.
using EpochCallback = std::function<void(const EpochRecord&, const Classifier&)>;

/// Standard robust training: every sample gets the full N-step corruption,
/// then one SGD step on the surrogate loss.
TrainResult train_baseline(Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                           const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Boundary-example mining: per batch, separate samples by signed prediction
/// variance and the F_R estimate, corrupt each class with its own budget,
/// reassemble in batch order, take one SGD step, then update F_R.
TrainResult train_bullettrain(Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                              const TrainConfig& config, const MiningConfig& mining,
                              const ComputeBudget& budget, const EpochCallback& on_epoch = {});

/// (N + 1) / (F_B*N_B + F_R*N_R + F_O*N_O + 1).
double theoretical_speedup(std::size_t baseline_steps, const ComputeBudget& budget,
                           const Fractions& fractions);

/// 3 / (1 + 2*F_B): three passes per sample for JSD training versus one
/// clean pass plus two corrupted passes for the boundary fraction.
double jsd_cost_speedup(double boundary_fraction);

// Critical-path cost for attack generators, pass cost for augmentation.
CostModel cost_model_for(GeneratorKind kind) noexcept;

}  // namespace bt
