#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "bullettrain/ledger.hpp"
#include "bullettrain/model.hpp"
#include "bullettrain/tensor.hpp"

namespace bt {

/// l-infinity PGD settings. A budget of zero steps never perturbs: random
/// initialisation only happens when at least one step is taken.
struct AttackConfig {
  double epsilon = 0.3;
  double step_size = 0.01;
  std::size_t steps = 10;
  bool random_init = true;
  double low = 0.0;
  double high = 1.0;

  void validate() const;
};

/// Inner maximisation objective. kKlToClean is the TRADES attack:
/// KL(softmax(h(x)) || softmax(h(x'))).
enum class AttackObjective { kCrossEntropy, kKlToClean };

// Called after every iteration with the projected iterate.
using StepObserver = std::function<void(std::size_t step, const Tensor& current)>;

/// Multi-step signed-gradient ascent projected onto the epsilon ball around
/// `x` and onto [low, high]. Row i draws its random start from
/// `sample_seeds[i]` only, so results do not depend on how rows are batched.
/// Charges `steps` generation steps per row to `ledger` when given.
Tensor pgd_generate(const Classifier& model, const Tensor& x, std::span<const Label> labels,
                    const AttackConfig& config, AttackObjective objective,
                    std::span<const std::uint64_t> sample_seeds, StepLedger* ledger = nullptr,
                    const StepObserver& observer = {});

/// Single step with step size epsilon.
Tensor fgsm_generate(const Classifier& model, const Tensor& x, std::span<const Label> labels,
                     const AttackConfig& config, AttackObjective objective,
                     std::span<const std::uint64_t> sample_seeds, StepLedger* ledger = nullptr);

enum class AugmentOp { kNoise, kTranslate, kCutout };

/// Simplified augmentation chain: `chain_length` ops drawn uniformly from
/// `ops`, then (with `mix`) a convex blend x + (1 - beta)(chain(x) - x) with
/// beta ~ U(0, 1) per sample.
struct AugmentConfig {
  std::size_t chain_length = 3;
  std::vector<AugmentOp> ops = {AugmentOp::kNoise, AugmentOp::kTranslate, AugmentOp::kCutout};
  double noise_sigma = 0.05;
  std::size_t max_translate = 2;
  std::size_t cutout_size = 8;
  bool mix = true;
  // Image layout of each row.
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  double low = 0.0;
  double high = 1.0;

  void validate(std::size_t row_size) const;
};

/// Two independently sampled corrupted variants (x', x''). Charges one
/// generation step per variant per row.
std::pair<Tensor, Tensor> augment_generate(const Tensor& x, const AugmentConfig& config,
                                           std::span<const std::uint64_t> sample_seeds,
                                           StepLedger* ledger = nullptr);

}  // namespace bt
