#include "bullettrain/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "bullettrain/errors.hpp"
#include "bullettrain/rng.hpp"

namespace bt {

void EvalConfig::validate() const {
  if (steps < 1) throw ArgumentError("eval: attack steps must be >= 1");
  if (restarts < 1) throw ArgumentError("eval: restarts must be >= 1");
  if (batch_size < 1) throw ArgumentError("eval: batch size must be >= 1");
}

namespace {

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

void check_inputs(const Tensor& inputs, std::span<const Label> labels) {
  if (inputs.rows() != labels.size()) throw ArgumentError("evaluation: label count mismatch");
}

}  // namespace

double clean_accuracy(const Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                      std::size_t batch_size) {
  check_inputs(inputs, labels);
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < labels.size(); start += batch_size) {
    const std::size_t end = std::min(labels.size(), start + batch_size);
    const auto idx = iota_range(start, end);
    const Tensor logits = model.forward(gather_rows(inputs, std::span<const std::size_t>(idx)));
    for (std::size_t r = 0; r < idx.size(); ++r) correct += predict_label(logits.row(r)) == labels[start + r];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double robust_accuracy(const Classifier& model, const Tensor& inputs, std::span<const Label> labels,
                       const EvalConfig& config) {
  config.validate();
  check_inputs(inputs, labels);
  if (labels.empty()) return 0.0;
  AttackConfig attack;
  attack.epsilon = config.epsilon;
  attack.step_size = config.step_size;
  attack.steps = config.steps;
  attack.random_init = true;
  attack.low = config.low;
  attack.high = config.high;

  std::size_t correct = 0;
  for (std::size_t start = 0; start < labels.size(); start += config.batch_size) {
    const std::size_t end = std::min(labels.size(), start + config.batch_size);
    const auto idx = iota_range(start, end);
    const Tensor x = gather_rows(inputs, std::span<const std::size_t>(idx));
    const std::span<const Label> y = labels.subspan(start, end - start);
    std::vector<bool> alive(idx.size());
    const Tensor clean = model.forward(x);
    for (std::size_t r = 0; r < idx.size(); ++r) alive[r] = predict_label(clean.row(r)) == y[r];
    if (config.epsilon > 0.0) {
      for (std::size_t restart = 0; restart < config.restarts; ++restart) {
        std::vector<std::uint64_t> seeds(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
          seeds[r] = derive_seed({config.seed, tag(Stream::kEval), restart, idx[r]});
        }
        const Tensor adv = pgd_generate(model, x, y, attack, AttackObjective::kCrossEntropy, seeds);
        const Tensor logits = model.forward(adv);
        for (std::size_t r = 0; r < idx.size(); ++r) {
          if (predict_label(logits.row(r)) != y[r]) alive[r] = false;
        }
      }
    }
    correct += static_cast<std::size_t>(std::count(alive.begin(), alive.end(), true));
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<ExampleClass> oracle_separation(const Classifier& model, const Tensor& inputs,
                                            std::span<const Label> labels, const AttackConfig& attack,
                                            AttackObjective objective,
                                            std::span<const std::uint64_t> sample_seeds) {
  check_inputs(inputs, labels);
  if (attack.steps < 1) throw ArgumentError("oracle_separation: N must be >= 1");
  const Tensor clean = model.forward(inputs);
  const Tensor adv = pgd_generate(model, inputs, labels, attack, objective, sample_seeds);
  const Tensor corrupted = model.forward(adv);
  std::vector<ExampleClass> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predict_label(clean.row(i)) != labels[i]) {
      out[i] = ExampleClass::kOutlier;
    } else if (predict_label(corrupted.row(i)) != labels[i]) {
      out[i] = ExampleClass::kBoundary;
    } else {
      out[i] = ExampleClass::kRobust;
    }
  }
  return out;
}

std::size_t MiningQuality::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion)
    for (std::size_t c : row) n += c;
  return n;
}

double MiningQuality::off_diagonal_fraction() const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t diag = 0;
  for (std::size_t i = 0; i < 3; ++i) diag += confusion[i][i];
  return static_cast<double>(n - diag) / static_cast<double>(n);
}

MiningQuality mining_quality(std::span<const ExampleClass> predicted,
                             std::span<const ExampleClass> oracle, std::span<const double> svars) {
  if (predicted.size() != oracle.size() || svars.size() != oracle.size()) {
    throw ArgumentError("mining_quality: inputs are not aligned");
  }
  MiningQuality q;
  std::array<double, 3> sums{};
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const auto o = static_cast<std::size_t>(oracle[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    ++q.confusion[o][p];
    ++q.oracle_counts[o];
    sums[o] += svars[i];
  }
  for (std::size_t c = 0; c < 3; ++c) {
    q.mean_svar[c] = q.oracle_counts[c] ? sums[c] / static_cast<double>(q.oracle_counts[c]) : 0.0;
  }
  // Outlier, boundary, robust is the enum order; compare consecutive present classes.
  bool have_prev = false;
  double prev = 0.0;
  for (ExampleClass c : {ExampleClass::kOutlier, ExampleClass::kBoundary, ExampleClass::kRobust}) {
    const auto i = static_cast<std::size_t>(c);
    if (q.oracle_counts[i] == 0) continue;
    if (have_prev && q.mean_svar[i] < prev) q.ordered = false;
    prev = q.mean_svar[i];
    have_prev = true;
  }
  return q;
}

}  // namespace bt
