#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bullettrain/config.hpp"
#include "bullettrain/ledger.hpp"
#include "bullettrain/model.hpp"
#include "bullettrain/trainer.hpp"

namespace bt {

const char* version_string() noexcept;

// Column set of metrics.csv. Bump kMetricsSchemaVersion when it changes.
inline constexpr int kMetricsSchemaVersion = 1;
const std::vector<std::string>& metrics_columns();

struct EpochMetrics {
  std::size_t epoch = 0;
  double clean_acc = 0.0;
  std::optional<double> robust_acc;  // empty on epochs without a robust evaluation
  Fractions fractions;
  std::uint64_t gen_steps = 0;
  std::uint64_t loss_passes = 0;
  double robust_fraction_estimate = 0.0;
  double wall_ms = 0.0;  // written to timing.csv, never to metrics.csv
};

struct RunSummary {
  std::string algorithm;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  Fractions fractions;
  StepLedger ledger;
  CostModel cost_model = CostModel::kCriticalPath;
  double theoretical_speedup = 1.0;
  // Reference baseline ledger (all samples at the full budget) over this ledger.
  double measured_speedup = 1.0;
};

struct RunResult {
  RunSummary summary;
  std::vector<EpochMetrics> epochs;
  Classifier model;
};

// Hook invoked after every epoch, before the epoch is evaluated.
using ExperimentCallback = std::function<void(const EpochRecord&, const Classifier&, const DataSplits&)>;

/// Trains and evaluates one configuration. With a non-empty `out_dir` writes
/// manifest.json, metrics.csv, timing.csv, summary.json and checkpoint.json.
RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                         const ExperimentCallback& on_epoch = {});
RunResult run_experiment(const ExperimentConfig& config, const DataSplits& data,
                         const std::filesystem::path& out_dir, const ExperimentCallback& on_epoch = {});

/// The ledger a baseline run over `samples` training samples would produce.
StepLedger reference_baseline_ledger(const ExperimentConfig& config, std::uint64_t samples);

std::string metrics_csv(const std::vector<EpochMetrics>& epochs);
std::string timing_csv(const std::vector<EpochMetrics>& epochs);
std::string summary_json(const RunSummary& summary);

/// Baseline run against the configured run with the same seed.
struct Comparison {
  RunSummary baseline;
  RunSummary accelerated;
  double measured_speedup = 1.0;     // baseline ledger / accelerated ledger
  double theoretical_speedup = 1.0;  // formula on the accelerated run's fractions
};
Comparison compare_runs(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// One run per value of `key`, written to out_dir/<key>=<value>/ plus sweep.csv.
struct SweepPoint {
  std::string value;
  RunSummary summary;
};
std::vector<SweepPoint> sweep(const ExperimentConfig& config, const std::string& key,
                              const std::vector<std::string>& values,
                              const std::filesystem::path& out_dir);

/// Oracle-separated runs that cut one class's budget at a time, and
/// optionally every (N_R, N_O) pair, with the other budgets at the full N.
struct LeaveOneOutEntry {
  std::string label;  // "baseline", "outlier", "robust", "boundary" or "grid"
  std::size_t outlier_steps = 0;
  std::size_t robust_steps = 0;
  std::size_t boundary_steps = 0;
};
std::vector<LeaveOneOutEntry> leave_one_out_plan(std::size_t steps, const std::vector<std::size_t>& levels,
                                                 bool grid);
struct LeaveOneOutResult {
  LeaveOneOutEntry entry;
  RunSummary summary;
};
std::vector<LeaveOneOutResult> leave_one_out(const ExperimentConfig& config,
                                             const std::vector<LeaveOneOutEntry>& plan,
                                             const std::filesystem::path& out_dir);

}  // namespace bt
