#include "bullettrain/ledger.hpp"

#include "bullettrain/errors.hpp"

namespace bt {

const char* to_string(ExampleClass c) noexcept {
  switch (c) {
    case ExampleClass::kOutlier: return "outlier";
    case ExampleClass::kBoundary: return "boundary";
    case ExampleClass::kRobust: return "robust";
  }
  return "?";
}

void StepLedger::charge_generation(std::size_t samples, std::size_t steps, bool runs_model) {
  generation_steps += static_cast<std::uint64_t>(samples) * steps;
  if (runs_model) attack_steps += static_cast<std::uint64_t>(samples) * steps;
}

void StepLedger::record_class(ExampleClass c, std::size_t samples) {
  class_counts[static_cast<std::size_t>(c)] += samples;
}

Fractions StepLedger::fractions() const {
  const double n = static_cast<double>(samples());
  if (n == 0) return {};
  return Fractions{
      static_cast<double>(class_counts[static_cast<std::size_t>(ExampleClass::kBoundary)]) / n,
      static_cast<double>(class_counts[static_cast<std::size_t>(ExampleClass::kRobust)]) / n,
      static_cast<double>(class_counts[static_cast<std::size_t>(ExampleClass::kOutlier)]) / n};
}

double StepLedger::cost(CostModel model) const {
  switch (model) {
    case CostModel::kCriticalPath:
      return static_cast<double>(generation_steps + update_iterations);
    case CostModel::kPasses:
      return static_cast<double>(attack_steps + clean_passes + corrupted_passes);
  }
  return 0.0;
}

StepLedger& StepLedger::operator+=(const StepLedger& other) {
  generation_steps += other.generation_steps;
  attack_steps += other.attack_steps;
  clean_passes += other.clean_passes;
  corrupted_passes += other.corrupted_passes;
  update_iterations += other.update_iterations;
  for (std::size_t i = 0; i < class_counts.size(); ++i) class_counts[i] += other.class_counts[i];
  return *this;
}

double measured_speedup(const StepLedger& baseline, const StepLedger& accelerated, CostModel model) {
  const double denom = accelerated.cost(model);
  if (denom <= 0) throw ArgumentError("measured_speedup: accelerated run has zero cost");
  return baseline.cost(model) / denom;
}

}  // namespace bt
