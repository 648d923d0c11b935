#include "bullettrain/experiment.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bullettrain/checkpoint.hpp"
#include "bullettrain/errors.hpp"
#include "bullettrain/evaluation.hpp"
#include "bullettrain/io.hpp"

namespace bt {

const char* version_string() noexcept { return BULLETTRAIN_VERSION_STRING; }

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> columns = {"epoch",  "clean_acc", "robust_acc", "F_B",
                                                   "F_R",    "F_O",       "gen_steps",  "loss_passes",
                                                   "F_R_estimate"};
  return columns;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join_columns(const std::vector<std::string>& cols) {
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ',';
    out += cols[i];
  }
  return out + '\n';
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

nlohmann::ordered_json ledger_json(const StepLedger& l) {
  nlohmann::ordered_json j;
  j["generation_steps"] = l.generation_steps;
  j["attack_steps"] = l.attack_steps;
  j["clean_passes"] = l.clean_passes;
  j["corrupted_passes"] = l.corrupted_passes;
  j["update_iterations"] = l.update_iterations;
  j["outlier_samples"] = l.class_counts[0];
  j["boundary_samples"] = l.class_counts[1];
  j["robust_samples"] = l.class_counts[2];
  return j;
}

nlohmann::ordered_json summary_to_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["algorithm"] = s.algorithm;
  j["clean_acc"] = s.clean_acc;
  j["robust_acc"] = s.robust_acc;
  j["F_B"] = s.fractions.boundary;
  j["F_R"] = s.fractions.robust;
  j["F_O"] = s.fractions.outlier;
  j["ledger"] = ledger_json(s.ledger);
  j["cost_model"] = s.cost_model == CostModel::kCriticalPath ? "critical_path" : "passes";
  j["cost"] = s.ledger.cost(s.cost_model);
  j["theoretical_speedup"] = s.theoretical_speedup;
  j["measured_speedup"] = s.measured_speedup;
  return j;
}

// Steps each class actually receives from the configured generator.
ComputeBudget effective_budget(const ExperimentConfig& config) {
  if (config.algorithm == "baseline") {
    return ComputeBudget::uniform(config.steps, config.attack_step_size());
  }
  ComputeBudget b = config.budget();
  if (config.generator != "pgd") {
    b.outlier_steps = std::min<std::size_t>(b.outlier_steps, 1);
    b.robust_steps = std::min<std::size_t>(b.robust_steps, 1);
    b.boundary_steps = std::min<std::size_t>(b.boundary_steps, 1);
  }
  return b;
}

double theoretical_for(const ExperimentConfig& config, const Fractions& f) {
  const ComputeBudget b = effective_budget(config);
  const auto kind = generator_kind_from_string(config.generator);
  if (kind == GeneratorKind::kPgd) return theoretical_speedup(config.steps, b, f);
  if (kind == GeneratorKind::kFgsm) return theoretical_speedup(1, b, f);
  // Augmentation: one clean pass plus one pass per variant for every augmented sample.
  const double variants = config.loss == "jsd" ? 2.0 : 1.0;
  double augmented = 0.0;
  if (b.outlier_steps) augmented += f.outlier;
  if (b.robust_steps) augmented += f.robust;
  if (b.boundary_steps) augmented += f.boundary;
  if (variants == 2.0 && b.robust_steps == 0 && b.outlier_steps == 0) return jsd_cost_speedup(f.boundary);
  return (1.0 + variants) / (1.0 + variants * augmented);
}

RunResult train_and_evaluate(const ExperimentConfig& config, const DataSplits& data,
                             const ExperimentCallback& on_epoch) {
  config.validate();
  const Dataset& train = data.train;
  const Dataset& test = data.test;
  train.validate();
  test.validate();
  const Architecture arch = Architecture::parse(config.arch);
  if (arch.input_size() != train.features() || arch.input_size() != test.features()) {
    throw ConfigError("config: model.arch expects " + std::to_string(arch.input_size()) +
                      " inputs, dataset has " + std::to_string(train.features()));
  }
  if (arch.classes() != train.classes) {
    throw ConfigError("config: model.arch has " + std::to_string(arch.classes()) + " classes, dataset has " +
                      std::to_string(train.classes));
  }

  Classifier model(arch, config.seed);
  const TrainConfig tc = config.train_config(train);
  const EvalConfig ec = config.eval_config(test);
  const Dataset probe = config.eval_size > 0 ? test.head(config.eval_size) : test;

  std::vector<EpochMetrics> epochs;
  auto callback = [&](const EpochRecord& record, const Classifier& current) {
    if (on_epoch) on_epoch(record, current, data);
    EpochMetrics m;
    m.epoch = record.epoch;
    m.clean_acc = clean_accuracy(current, probe.inputs, probe.labels, ec.batch_size);
    if (config.eval_every > 0 && (record.epoch % config.eval_every == 0 || record.epoch == config.epochs)) {
      m.robust_acc = robust_accuracy(current, probe.inputs, probe.labels, ec);
    }
    m.fractions = record.fractions;
    m.gen_steps = record.ledger.generation_steps;
    m.loss_passes = record.ledger.clean_passes + record.ledger.corrupted_passes;
    m.robust_fraction_estimate = record.robust_fraction_estimate;
    m.wall_ms = record.wall_ms;
    epochs.push_back(m);
  };

  TrainResult trained;
  if (config.algorithm == "baseline") {
    trained = train_baseline(model, train.inputs, train.labels, tc, callback);
  } else {
    trained = train_bullettrain(model, train.inputs, train.labels, tc, config.mining_config(), config.budget(),
                                callback);
  }

  RunSummary s;
  s.algorithm = config.algorithm;
  s.clean_acc = clean_accuracy(model, test.inputs, test.labels, ec.batch_size);
  s.robust_acc = robust_accuracy(model, test.inputs, test.labels, ec);
  s.ledger = trained.ledger;
  s.fractions = trained.ledger.fractions();
  s.cost_model = cost_model_for(tc.generator.kind);
  s.theoretical_speedup = theoretical_for(config, s.fractions);
  s.measured_speedup =
      measured_speedup(reference_baseline_ledger(config, trained.ledger.samples()), trained.ledger, s.cost_model);
  return RunResult{s, std::move(epochs), std::move(model)};
}

void write_run(const ExperimentConfig& config, const RunResult& run, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json manifest;
  manifest["version"] = version_string();
  manifest["metrics_schema"] = kMetricsSchemaVersion;
  manifest["created"] = utc_timestamp();
  manifest["seed"] = config.seed;
  manifest["config"] = nlohmann::ordered_json::parse(config_to_json(config));
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  write_file_atomic(dir / "metrics.csv", metrics_csv(run.epochs));
  write_file_atomic(dir / "timing.csv", timing_csv(run.epochs));
  write_file_atomic(dir / "summary.json", summary_json(run.summary));
  save_checkpoint(run.model, dir / "checkpoint.json");
}

std::string dir_name(const std::string& key, const std::string& value) {
  std::string out = key + "=" + value;
  for (char& c : out) {
    if (c == '/' || c == '\\' || c == ' ' || c == '"') c = '_';
  }
  return out;
}

}  // namespace

StepLedger reference_baseline_ledger(const ExperimentConfig& config, std::uint64_t samples) {
  StepLedger l;
  const auto kind = generator_kind_from_string(config.generator);
  switch (kind) {
    case GeneratorKind::kPgd: l.charge_generation(samples, config.steps, true); break;
    case GeneratorKind::kFgsm: l.charge_generation(samples, 1, true); break;
    case GeneratorKind::kAugment: l.charge_generation(samples, 2, false); break;
  }
  l.record_class(ExampleClass::kBoundary, samples);
  l.clean_passes = samples;
  l.corrupted_passes = samples * (config.loss == "jsd" ? 2 : 1);
  l.update_iterations = samples;
  return l;
}

std::string metrics_csv(const std::vector<EpochMetrics>& epochs) {
  std::string out = join_columns(metrics_columns());
  for (const auto& m : epochs) {
    out += std::to_string(m.epoch) + ',' + fmt(m.clean_acc) + ',' + (m.robust_acc ? fmt(*m.robust_acc) : "") +
           ',' + fmt(m.fractions.boundary) + ',' + fmt(m.fractions.robust) + ',' + fmt(m.fractions.outlier) +
           ',' + std::to_string(m.gen_steps) + ',' + std::to_string(m.loss_passes) + ',' +
           fmt(m.robust_fraction_estimate) + '\n';
  }
  return out;
}

std::string timing_csv(const std::vector<EpochMetrics>& epochs) {
  std::string out = "epoch,wall_ms\n";
  for (const auto& m : epochs) out += std::to_string(m.epoch) + ',' + fmt(m.wall_ms) + '\n';
  return out;
}

std::string summary_json(const RunSummary& summary) { return summary_to_json(summary).dump(2) + "\n"; }

RunResult run_experiment(const ExperimentConfig& config, const DataSplits& data,
                         const std::filesystem::path& out_dir, const ExperimentCallback& on_epoch) {
  RunResult run = train_and_evaluate(config, data, on_epoch);
  if (!out_dir.empty()) write_run(config, run, out_dir);
  return run;
}

RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                         const ExperimentCallback& on_epoch) {
  config.validate();
  return run_experiment(config, load_datasets(config), out_dir, on_epoch);
}

Comparison compare_runs(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const DataSplits data = load_datasets(config);
  ExperimentConfig base = config;
  base.algorithm = "baseline";
  const auto sub = [&](const char* name) { return out_dir.empty() ? out_dir : out_dir / name; };
  const RunResult b = run_experiment(base, data, sub("baseline"));
  const RunResult a = run_experiment(config, data, sub(config.algorithm == "baseline" ? "baseline_repeat" : config.algorithm.c_str()));

  Comparison c;
  c.baseline = b.summary;
  c.accelerated = a.summary;
  c.measured_speedup = measured_speedup(b.summary.ledger, a.summary.ledger, a.summary.cost_model);
  c.theoretical_speedup = a.summary.theoretical_speedup;
  if (!out_dir.empty()) {
    nlohmann::ordered_json j;
    j["seed"] = config.seed;
    j["baseline"] = summary_to_json(c.baseline);
    j["accelerated"] = summary_to_json(c.accelerated);
    j["measured_speedup"] = c.measured_speedup;
    j["theoretical_speedup"] = c.theoretical_speedup;
    j["robust_acc_delta"] = c.accelerated.robust_acc - c.baseline.robust_acc;
    write_file_atomic(out_dir / "compare.json", j.dump(2) + "\n");
  }
  return c;
}

std::vector<SweepPoint> sweep(const ExperimentConfig& config, const std::string& key,
                              const std::vector<std::string>& values, const std::filesystem::path& out_dir) {
  if (values.empty()) throw ConfigError("sweep: no values given for " + key);
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    ExperimentConfig c = config;
    c.set(key, v);
    c.validate();
    configs.push_back(std::move(c));
  }
  const DataSplits data = load_datasets(config);
  std::vector<SweepPoint> points;
  std::string csv = "value,clean_acc,robust_acc,F_B,F_R,F_O,gen_steps,theoretical_speedup,measured_speedup\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    // Data-shaping keys need their own splits.
    const bool own_data = key.rfind("dataset.", 0) == 0 || key == "run.seed";
    const RunResult r = own_data ? run_experiment(configs[i], out_dir.empty() ? out_dir : out_dir / dir_name(key, values[i]))
                                 : run_experiment(configs[i], data, out_dir.empty() ? out_dir : out_dir / dir_name(key, values[i]));
    const RunSummary& s = r.summary;
    csv += values[i] + ',' + fmt(s.clean_acc) + ',' + fmt(s.robust_acc) + ',' + fmt(s.fractions.boundary) + ',' +
           fmt(s.fractions.robust) + ',' + fmt(s.fractions.outlier) + ',' + std::to_string(s.ledger.generation_steps) +
           ',' + fmt(s.theoretical_speedup) + ',' + fmt(s.measured_speedup) + '\n';
    points.push_back({values[i], s});
  }
  if (!out_dir.empty()) write_file_atomic(out_dir / "sweep.csv", csv);
  return points;
}

std::vector<LeaveOneOutEntry> leave_one_out_plan(std::size_t steps, const std::vector<std::size_t>& levels,
                                                 bool grid) {
  std::vector<LeaveOneOutEntry> plan;
  plan.push_back({"baseline", steps, steps, steps});
  for (std::size_t level : levels) {
    if (level >= steps) continue;
    plan.push_back({"outlier", level, steps, steps});
    plan.push_back({"robust", steps, level, steps});
    plan.push_back({"boundary", steps, steps, level});
  }
  if (grid) {
    for (std::size_t r : levels)
      for (std::size_t o : levels) {
        if (r > steps || o > steps) continue;
        plan.push_back({"grid", o, r, steps});
      }
  }
  return plan;
}

std::vector<LeaveOneOutResult> leave_one_out(const ExperimentConfig& config,
                                             const std::vector<LeaveOneOutEntry>& plan,
                                             const std::filesystem::path& out_dir) {
  config.validate();
  const DataSplits data = load_datasets(config);
  std::vector<LeaveOneOutResult> results;
  std::string csv = "label,N_O,N_R,N_B,clean_acc,robust_acc,F_B,F_R,F_O,gen_steps\n";
  for (const auto& e : plan) {
    ExperimentConfig c = config;
    c.algorithm = e.label == "baseline" ? "baseline" : "oracle";
    c.outlier_steps = e.outlier_steps;
    c.robust_steps = e.robust_steps;
    c.boundary_steps = e.boundary_steps;
    c.outlier_step_size = c.robust_step_size = c.boundary_step_size = 0.0;
    c.validate();
    const std::string name = e.label + "_O" + std::to_string(e.outlier_steps) + "_R" + std::to_string(e.robust_steps) +
                             "_B" + std::to_string(e.boundary_steps);
    const RunResult r = run_experiment(c, data, out_dir.empty() ? out_dir : out_dir / name);
    const RunSummary& s = r.summary;
    csv += e.label + ',' + std::to_string(e.outlier_steps) + ',' + std::to_string(e.robust_steps) + ',' +
           std::to_string(e.boundary_steps) + ',' + fmt(s.clean_acc) + ',' + fmt(s.robust_acc) + ',' +
           fmt(s.fractions.boundary) + ',' + fmt(s.fractions.robust) + ',' + fmt(s.fractions.outlier) + ',' +
           std::to_string(s.ledger.generation_steps) + '\n';
    results.push_back({e, s});
    if (!out_dir.empty()) write_file_atomic(out_dir / "leaveoneout.csv", csv);
  }
  return results;
}

}  // namespace bt
