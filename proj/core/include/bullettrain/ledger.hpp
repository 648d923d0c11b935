#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace bt {

enum class ExampleClass : std::uint8_t { kOutlier = 0, kBoundary = 1, kRobust = 2 };

inline constexpr std::array<ExampleClass, 3> kExampleClasses = {
    ExampleClass::kOutlier, ExampleClass::kBoundary, ExampleClass::kRobust};

const char* to_string(ExampleClass c) noexcept;

struct Fractions {
  double boundary = 0.0;
  double robust = 0.0;
  double outlier = 0.0;

  double total() const { return boundary + robust + outlier; }
};

/// How compute is charged when converting a ledger into a cost.
enum class CostModel {
  // Generation steps run sequentially, then one parallel loss/update
  // iteration per sample: cost = generation_steps + update_iterations.
  kCriticalPath,
  // Every forward+backward pass counts: model-evaluating generation steps
  // plus clean and corrupted loss passes.
  kPasses,
};

/// Exact count of the work a training run performed. One unit is a
/// forward+backward pass over one sample.
struct StepLedger {
  std::uint64_t generation_steps = 0;  // all generation iterations, per sample
  std::uint64_t attack_steps = 0;      // subset of generation_steps that ran the model
  std::uint64_t clean_passes = 0;
  std::uint64_t corrupted_passes = 0;
  std::uint64_t update_iterations = 0;  // samples that went through a parameter update
  std::array<std::uint64_t, 3> class_counts{};  // indexed by ExampleClass

  void charge_generation(std::size_t samples, std::size_t steps, bool runs_model);
  void record_class(ExampleClass c, std::size_t samples);

  std::uint64_t samples() const { return class_counts[0] + class_counts[1] + class_counts[2]; }
  // Per-class fractions weighted by actual batch sizes.
  Fractions fractions() const;
  double cost(CostModel model) const;

  StepLedger& operator+=(const StepLedger& other);
  friend bool operator==(const StepLedger&, const StepLedger&) = default;
};

// baseline cost / accelerated cost under `model`.
double measured_speedup(const StepLedger& baseline, const StepLedger& accelerated, CostModel model);

}  // namespace bt
