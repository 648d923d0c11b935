#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bullettrain/ledger.hpp"
#include "bullettrain/model.hpp"
#include "bullettrain/tensor.hpp"

namespace bt {

/// Running estimates of the robust and outlier fractions.
struct MiningState {
  double robust_fraction = 0.0;   // F_R, in [0, gamma]
  double outlier_fraction = 0.0;  // F_O of the latest batch, reporting only
  double momentum = 0.9;          // p
  double gamma = 0.8;

  void validate() const;
};

/// +1 when the clean prediction matches the label, -1 otherwise.
int sign_of_prediction(std::span<const double> logits, Label label);

/// sign_of_prediction * prediction_variance(softmax(logits)).
double signed_variance(std::span<const double> logits, Label label);

std::vector<double> signed_variances(const Tensor& logits, std::span<const Label> labels);

/// Nearest-rank percentile: sorted ascending, 1-based rank ceil(q*m), q = 0
/// maps to the minimum.
double percentile_nearest_rank(std::span<const double> values, double q);

/// Outlier iff svar < 0; Boundary iff 0 <= svar < Percentile(svars, 1 - F_R);
/// Robust otherwise. The percentile runs over all m values, negatives included.
std::vector<ExampleClass> classify_batch(std::span<const double> svars, double robust_fraction);

/// F_R <- p*F_R + (1-p)*gamma*(corrupted accuracy).
MiningState update_robust_fraction(const MiningState& state, const Tensor& corrupted_logits,
                                   std::span<const Label> labels);

/// 1 - clean accuracy.
double measure_outlier_fraction(const Tensor& clean_logits, std::span<const Label> labels);

}  // namespace bt
