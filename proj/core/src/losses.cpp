#include "bullettrain/losses.hpp"

#include <string>

#include "bullettrain/errors.hpp"

namespace bt {

const char* to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::kAT: return "at";
    case LossKind::kTRADES: return "trades";
    case LossKind::kJSD: return "jsd";
  }
  return "?";
}

LossKind loss_kind_from_string(std::string_view text) {
  if (text == "at") return LossKind::kAT;
  if (text == "trades") return LossKind::kTRADES;
  if (text == "jsd") return LossKind::kJSD;
  throw ArgumentError("unknown loss kind '" + std::string(text) + "' (expected at, trades or jsd)");
}

void LossConfig::validate() const {
  if (kind == LossKind::kTRADES && !(beta > 0.0)) throw ArgumentError("loss: TRADES beta must be > 0");
  if (kind == LossKind::kJSD && !(jsd_weight >= 0.0)) throw ArgumentError("loss: jsd_weight must be >= 0");
  if (classes < 2) throw ArgumentError("loss: need at least two classes");
}

namespace {

Var mean_cross_entropy(Tape& tape, Var logits, std::span<const Label> labels) {
  return tape.scale(tape.mean(tape.pick(tape.log_softmax(logits), labels)), -1.0);
}

Var row_kl_probs(Tape& tape, Var p, Var q) {
  const double floor = kProbabilityFloor;
  return tape.row_sum(tape.mul(p, tape.sub(tape.log_floor(p, floor), tape.log_floor(q, floor))));
}

template <typename Fn>
double evaluate(Fn&& fn) {
  Tape tape;
  return tape.value(fn(tape)).item();
}

}  // namespace

Var at_loss(Tape& tape, Var corrupted_logits, std::span<const Label> labels) {
  return mean_cross_entropy(tape, corrupted_logits, labels);
}

Var kl_rows(Tape& tape, Var p_logits, Var q_logits) {
  return row_kl_probs(tape, tape.softmax(p_logits), tape.softmax(q_logits));
}

Var trades_loss(Tape& tape, Var clean_logits, Var corrupted_logits, std::span<const Label> labels,
                double beta) {
  Var natural = mean_cross_entropy(tape, clean_logits, labels);
  Var robust = tape.mean(kl_rows(tape, clean_logits, corrupted_logits));
  return tape.add(natural, tape.scale(robust, beta));
}

Var jsd_loss(Tape& tape, Var clean_logits, Var first_logits, Var second_logits) {
  Var p0 = tape.softmax(clean_logits);
  Var p1 = tape.softmax(first_logits);
  Var p2 = tape.softmax(second_logits);
  Var mixture = tape.scale(tape.add(tape.add(p0, p1), p2), 1.0 / 3.0);
  Var total = tape.add(tape.add(row_kl_probs(tape, p0, mixture), row_kl_probs(tape, p1, mixture)),
                       row_kl_probs(tape, p2, mixture));
  return tape.scale(tape.mean(total), 1.0 / 3.0);
}

double at_loss(const Tensor& corrupted_logits, std::span<const Label> labels) {
  return evaluate([&](Tape& t) { return at_loss(t, t.constant(corrupted_logits), labels); });
}

double trades_loss(const Tensor& clean_logits, const Tensor& corrupted_logits,
                   std::span<const Label> labels, double beta) {
  return evaluate([&](Tape& t) {
    return trades_loss(t, t.constant(clean_logits), t.constant(corrupted_logits), labels, beta);
  });
}

double jsd_loss(const Tensor& clean_logits, const Tensor& first_logits, const Tensor& second_logits) {
  return evaluate([&](Tape& t) {
    return jsd_loss(t, t.constant(clean_logits), t.constant(first_logits), t.constant(second_logits));
  });
}

Var combined_bullettrain_loss(Tape& tape, Var clean_logits, std::span<const CorruptedRows> groups,
                              std::span<const Label> labels, const LossConfig& config) {
  config.validate();
  const std::size_t m = tape.value(clean_logits).rows();
  if (labels.size() != m) throw ArgumentError("combined loss: label count mismatch");

  // source[i] = row of the concatenation [clean; group0; group1; ...] holding row i's x'.
  std::vector<std::size_t> source(m);
  std::vector<bool> covered(m, false);
  for (std::size_t i = 0; i < m; ++i) source[i] = i;
  std::vector<Var> first_parts{clean_logits};
  std::vector<Var> second_parts{clean_logits};
  std::size_t offset = m;
  for (const auto& group : groups) {
    const std::size_t rows = tape.value(group.logits).rows();
    if (rows != group.indices.size()) {
      throw InternalError("combined loss: group has " + std::to_string(rows) + " logit rows but " +
                          std::to_string(group.indices.size()) + " indices");
    }
    if (config.kind == LossKind::kJSD) {
      if (!group.second_logits || tape.value(*group.second_logits).rows() != rows) {
        throw InternalError("combined loss: JSD group without matching second variant");
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = group.indices[r];
      if (i >= m || covered[i]) {
        throw InternalError("combined loss: corrupted row index " + std::to_string(i) +
                            " is out of range or assigned twice");
      }
      covered[i] = true;
      source[i] = offset + r;
    }
    if (rows > 0) {
      first_parts.push_back(group.logits);
      if (config.kind == LossKind::kJSD) second_parts.push_back(*group.second_logits);
    }
    offset += rows;
  }

  auto assemble = [&](const std::vector<Var>& parts) {
    if (parts.size() == 1) return clean_logits;
    return tape.gather_rows(tape.concat_rows(parts), source);
  };

  switch (config.kind) {
    case LossKind::kAT:
      return at_loss(tape, assemble(first_parts), labels);
    case LossKind::kTRADES:
      return trades_loss(tape, clean_logits, assemble(first_parts), labels, config.beta);
    case LossKind::kJSD: {
      Var natural = mean_cross_entropy(tape, clean_logits, labels);
      Var consistency = jsd_loss(tape, clean_logits, assemble(first_parts), assemble(second_parts));
      return tape.add(natural, tape.scale(consistency, config.jsd_weight));
    }
  }
  throw InternalError("combined loss: unknown loss kind");
}

}  // namespace bt
