#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "bullettrain/autodiff.hpp"
#include "bullettrain/model.hpp"

namespace bt {

enum class LossKind { kAT, kTRADES, kJSD };

const char* to_string(LossKind kind) noexcept;
LossKind loss_kind_from_string(std::string_view text);

struct LossConfig {
  LossKind kind = LossKind::kTRADES;
  double beta = 6.0;         // TRADES weight, 1/lambda
  double jsd_weight = 12.0;  // weight of the JSD consistency term
  std::size_t classes = 2;

  void validate() const;
};

// All batch losses average over rows.

/// Mean cross-entropy of the corrupted logits.
Var at_loss(Tape& tape, Var corrupted_logits, std::span<const Label> labels);

/// CE(clean, y) + beta * KL(softmax(clean) || softmax(corrupted)).
Var trades_loss(Tape& tape, Var clean_logits, Var corrupted_logits, std::span<const Label> labels,
                double beta);

/// Jensen-Shannon divergence of three predictive distributions around their
/// mean M, computed on softmax probabilities. Bounded by ln 3.
Var jsd_loss(Tape& tape, Var clean_logits, Var first_logits, Var second_logits);

// Per-row KL(softmax(p_logits) || softmax(q_logits)) with the probability floor.
Var kl_rows(Tape& tape, Var p_logits, Var q_logits);

double at_loss(const Tensor& corrupted_logits, std::span<const Label> labels);
double trades_loss(const Tensor& clean_logits, const Tensor& corrupted_logits,
                   std::span<const Label> labels, double beta);
double jsd_loss(const Tensor& clean_logits, const Tensor& first_logits, const Tensor& second_logits);

/// Logits of the rows that were actually perturbed. Row r of `logits` belongs
/// to original batch row `indices[r]`. `second_logits` carries the x'' variant
/// for JSD.
struct CorruptedRows {
  Var logits;
  std::optional<Var> second_logits;
  std::vector<std::size_t> indices;
};

/// Configured surrogate over the whole batch in original order. Rows not
/// covered by any group were not perturbed (x' == x) and reuse the clean
/// logits, so their consistency terms vanish. Throws InternalError when the
/// groups do not map injectively into [0, m).
Var combined_bullettrain_loss(Tape& tape, Var clean_logits, std::span<const CorruptedRows> groups,
                              std::span<const Label> labels, const LossConfig& config);

}  // namespace bt
