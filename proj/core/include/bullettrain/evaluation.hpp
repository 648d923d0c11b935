#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bullettrain/corruption.hpp"
#include "bullettrain/ledger.hpp"
#include "bullettrain/model.hpp"

namespace bt {

struct EvalConfig {
  std::size_t steps = 20;
  std::size_t restarts = 1;
  double epsilon = 0.3;
  double step_size = 0.01;
  std::uint64_t seed = 0;
  double low = 0.0;
  double high = 1.0;
  std::size_t batch_size = 256;

  void validate() const;
};

double clean_accuracy(const Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                      std::size_t batch_size = 256);

/// Fraction of samples that stay correct at the clean point and under every
/// one of `restarts` randomly initialised PGD attacks. Including the clean
/// point makes robust accuracy <= clean accuracy by construction.
double robust_accuracy(const Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                       const EvalConfig& config);

/// Ground-truth taxonomy from a full N-step attack: Outlier if the clean
/// input is misclassified, Boundary if only x' is, Robust otherwise.
std::vector<ExampleClass> oracle_separation(const Classifier& model, const Tensor& inputs,
                                            std::span<const Label> labels, const AttackConfig& attack,
                                            AttackObjective objective,
                                            std::span<const std::uint64_t> sample_seeds);

struct MiningQuality {
  // counts[oracle][predicted], indexed by ExampleClass.
  std::array<std::array<std::size_t, 3>, 3> confusion{};
  std::array<double, 3> mean_svar{};
  std::array<std::size_t, 3> oracle_counts{};
  // mean SVar of outlier <= boundary <= robust over the classes present.
  bool ordered = true;

  std::size_t total() const;
  double off_diagonal_fraction() const;
};

MiningQuality mining_quality(std::span<const ExampleClass> predicted,
                             std::span<const ExampleClass> oracle, std::span<const double> svars);

}  // namespace bt
