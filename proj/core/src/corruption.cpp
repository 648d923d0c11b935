#include "bullettrain/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bullettrain/autodiff.hpp"
#include "bullettrain/errors.hpp"
#include "bullettrain/rng.hpp"

namespace bt {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ArgumentError("attack: epsilon must be >= 0");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw ArgumentError("attack: step size must be >= 0");
  }
  if (!(low < high)) throw ArgumentError("attack: input bounds need low < high");
}

namespace {

void check_batch(const Classifier& model, const Tensor& x, std::span<const Label> labels,
                 std::span<const std::uint64_t> seeds) {
  if (x.cols() != model.input_size()) {
    throw ArgumentError("attack: input has " + std::to_string(x.cols()) + " features, model expects " +
                        std::to_string(model.input_size()));
  }
  if (labels.size() != x.rows() || seeds.size() != x.rows()) {
    throw ArgumentError("attack: need one label and one seed per row");
  }
  for (Label y : labels) {
    if (y >= model.classes()) throw ArgumentError("attack: label out of range");
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Clamp into [o - eps, o + eps] so that |v - o| <= eps holds in floating point too.
double project(double v, double o, double eps) {
  v = std::clamp(v, o - eps, o + eps);
  while (v - o > eps) v = std::nextafter(v, o);
  while (o - v > eps) v = std::nextafter(v, o);
  return v;
}

}  // namespace

Tensor pgd_generate(const Classifier& model, const Tensor& x, std::span<const Label> labels,
                    const AttackConfig& config, AttackObjective objective,
                    std::span<const std::uint64_t> sample_seeds, StepLedger* ledger,
                    const StepObserver& observer) {
  config.validate();
  check_batch(model, x, labels, sample_seeds);
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  Tensor adv = x;
  if (m == 0 || config.steps == 0) return adv;

  if (config.random_init) {
    for (std::size_t i = 0; i < m; ++i) {
      Rng rng(sample_seeds[i]);
      std::uniform_real_distribution<double> offset(-config.epsilon, config.epsilon);
      auto row = adv.row(i);
      auto o = x.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = std::clamp(project(o[j] + offset(rng), o[j], config.epsilon), config.low, config.high);
      }
    }
  }

  Tensor clean_probs;
  if (objective == AttackObjective::kKlToClean) {
    Tape tape;
    Var probs = tape.softmax(model.forward(tape, tape.constant(x), false));
    clean_probs = tape.value(probs);
  }

  for (std::size_t step = 0; step < config.steps; ++step) {
    Tape tape;
    Var input = tape.input(adv);
    Var logp = tape.log_softmax(model.forward(tape, input, false));
    // Summed (not averaged) so each row's gradient is independent of m.
    Var objective_value =
        objective == AttackObjective::kCrossEntropy
            ? tape.scale(tape.sum(tape.pick(logp, labels)), -1.0)
            : tape.scale(tape.sum(tape.mul(tape.constant(clean_probs), logp)), -1.0);
    tape.backward(objective_value);
    const Tensor grad = tape.grad(input);
    for (std::size_t i = 0; i < m; ++i) {
      auto g = grad.row(i);
      for (double v : g) {
        if (!std::isfinite(v)) {
          throw NumericError("attack: non-finite input gradient for sample " + std::to_string(i) +
                             " at step " + std::to_string(step));
        }
      }
      auto a = adv.row(i);
      auto o = x.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        double v = a[j] + config.step_size * sign(g[j]);
        a[j] = std::clamp(project(v, o[j], config.epsilon), config.low, config.high);
      }
    }
    if (observer) observer(step, adv);
  }
  if (ledger) ledger->charge_generation(m, config.steps, true);
  return adv;
}

Tensor fgsm_generate(const Classifier& model, const Tensor& x, std::span<const Label> labels,
                     const AttackConfig& config, AttackObjective objective,
                     std::span<const std::uint64_t> sample_seeds, StepLedger* ledger) {
  AttackConfig single = config;
  single.steps = 1;
  single.step_size = config.epsilon;
  return pgd_generate(model, x, labels, single, objective, sample_seeds, ledger);
}

void AugmentConfig::validate(std::size_t row_size) const {
  if (channels * height * width != row_size) {
    throw ArgumentError("augment: image layout " + std::to_string(channels) + "x" +
                        std::to_string(height) + "x" + std::to_string(width) +
                        " does not match row size " + std::to_string(row_size));
  }
  if (!(noise_sigma >= 0.0)) throw ArgumentError("augment: noise sigma must be >= 0");
  if (!(low < high)) throw ArgumentError("augment: bounds need low < high");
  if (chain_length > 0 && ops.empty()) throw ArgumentError("augment: empty op set");
}

namespace {

void apply_noise(std::span<double> img, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : img) v += noise(rng);
}

// Integer shift with edge replication.
void apply_translate(std::span<double> img, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.max_translate == 0) return;
  const long t = static_cast<long>(cfg.max_translate);
  std::uniform_int_distribution<long> shift(-t, t);
  const long dy = shift(rng);
  const long dx = shift(rng);
  if (dx == 0 && dy == 0) return;
  const long h = static_cast<long>(cfg.height), w = static_cast<long>(cfg.width);
  std::vector<double> src(img.begin(), img.end());
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    const double* plane = src.data() + c * cfg.height * cfg.width;
    double* out = img.data() + c * cfg.height * cfg.width;
    for (long y = 0; y < h; ++y) {
      const long sy = std::clamp(y - dy, 0L, h - 1);
      for (long x = 0; x < w; ++x) {
        const long sx = std::clamp(x - dx, 0L, w - 1);
        out[y * w + x] = plane[sy * w + sx];
      }
    }
  }
}

// Square of side `cutout_size` centred uniformly in the image, filled with `low`.
void apply_cutout(std::span<double> img, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.cutout_size == 0) return;
  std::uniform_int_distribution<std::size_t> cy(0, cfg.height - 1);
  std::uniform_int_distribution<std::size_t> cx(0, cfg.width - 1);
  const long half = static_cast<long>(cfg.cutout_size / 2);
  const long y0 = static_cast<long>(cy(rng)) - half;
  const long x0 = static_cast<long>(cx(rng)) - half;
  const long h = static_cast<long>(cfg.height), w = static_cast<long>(cfg.width);
  const long side = static_cast<long>(cfg.cutout_size);
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    double* plane = img.data() + c * cfg.height * cfg.width;
    for (long y = std::max(0L, y0); y < std::min(h, y0 + side); ++y)
      for (long x = std::max(0L, x0); x < std::min(w, x0 + side); ++x) plane[y * w + x] = cfg.low;
  }
}

void augment_row(std::span<const double> original, std::span<double> out, const AugmentConfig& cfg,
                 Rng& rng) {
  std::copy(original.begin(), original.end(), out.begin());
  if (cfg.chain_length == 0) return;
  std::uniform_int_distribution<std::size_t> pick(0, cfg.ops.size() - 1);
  for (std::size_t i = 0; i < cfg.chain_length; ++i) {
    switch (cfg.ops[pick(rng)]) {
      case AugmentOp::kNoise: apply_noise(out, cfg.noise_sigma, rng); break;
      case AugmentOp::kTranslate: apply_translate(out, cfg, rng); break;
      case AugmentOp::kCutout: apply_cutout(out, cfg, rng); break;
    }
    for (double& v : out) v = std::clamp(v, cfg.low, cfg.high);
  }
  if (cfg.mix) {
    std::uniform_real_distribution<double> beta_dist(0.0, 1.0);
    const double keep = 1.0 - beta_dist(rng);
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = std::clamp(original[j] + keep * (out[j] - original[j]), cfg.low, cfg.high);
    }
  }
}

}  // namespace

std::pair<Tensor, Tensor> augment_generate(const Tensor& x, const AugmentConfig& config,
                                           std::span<const std::uint64_t> sample_seeds,
                                           StepLedger* ledger) {
  config.validate(x.cols());
  if (sample_seeds.size() != x.rows()) throw ArgumentError("augment: need one seed per row");
  Tensor first = x;
  Tensor second = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Rng rng(sample_seeds[i]);
    augment_row(x.row(i), first.row(i), config, rng);
    augment_row(x.row(i), second.row(i), config, rng);
  }
  if (ledger) ledger->charge_generation(x.rows(), 2, false);
  return {std::move(first), std::move(second)};
}

}  // namespace bt
