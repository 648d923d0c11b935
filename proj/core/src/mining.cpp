#include "bullettrain/mining.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bullettrain/errors.hpp"

namespace bt {

void MiningState::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("mining: momentum must be in [0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ArgumentError("mining: gamma must be in (0, 1]");
  if (!(robust_fraction >= 0.0 && robust_fraction <= 1.0)) {
    throw ArgumentError("mining: F_R must be in [0, 1]");
  }
}

int sign_of_prediction(std::span<const double> logits, Label label) {
  if (label >= logits.size()) throw ArgumentError("sign_of_prediction: label out of range");
  return predict_label(logits) == label ? 1 : -1;
}

double signed_variance(std::span<const double> logits, Label label) {
  const auto probs = softmax(logits);
  return sign_of_prediction(logits, label) * prediction_variance(std::span<const double>(probs));
}

std::vector<double> signed_variances(const Tensor& logits, std::span<const Label> labels) {
  if (labels.size() != logits.rows()) throw ArgumentError("signed_variances: label count mismatch");
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = signed_variance(logits.row(i), labels[i]);
  return out;
}

double percentile_nearest_rank(std::span<const double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile of an empty batch");
  if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("percentile: q must be in [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (q == 0.0) return sorted.front();
  const double m = static_cast<double>(sorted.size());
  // The epsilon absorbs representation error in q = 1 - F_R.
  auto rank = static_cast<std::size_t>(std::ceil(q * m - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

std::vector<ExampleClass> classify_batch(std::span<const double> svars, double robust_fraction) {
  if (svars.empty()) throw ArgumentError("classify_batch: empty batch");
  if (!(robust_fraction >= 0.0 && robust_fraction <= 1.0)) {
    throw ArgumentError("classify_batch: F_R must be in [0, 1]");
  }
  const double threshold = percentile_nearest_rank(svars, 1.0 - robust_fraction);
  std::vector<ExampleClass> out(svars.size());
  for (std::size_t i = 0; i < svars.size(); ++i) {
    if (svars[i] < 0.0) {
      out[i] = ExampleClass::kOutlier;
    } else if (svars[i] < threshold) {
      out[i] = ExampleClass::kBoundary;
    } else {
      out[i] = ExampleClass::kRobust;
    }
  }
  return out;
}

namespace {

double accuracy(const Tensor& logits, std::span<const Label> labels) {
  if (labels.size() != logits.rows()) throw ArgumentError("accuracy: label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predict_label(logits.row(i)) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

MiningState update_robust_fraction(const MiningState& state, const Tensor& corrupted_logits,
                                   std::span<const Label> labels) {
  MiningState next = state;
  next.robust_fraction = state.momentum * state.robust_fraction +
                         (1.0 - state.momentum) * state.gamma * accuracy(corrupted_logits, labels);
  return next;
}

double measure_outlier_fraction(const Tensor& clean_logits, std::span<const Label> labels) {
  return 1.0 - accuracy(clean_logits, labels);
}

}  // namespace bt
