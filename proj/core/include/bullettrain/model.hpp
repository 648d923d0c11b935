#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bullettrain/autodiff.hpp"
#include "bullettrain/tensor.hpp"

namespace bt {

using Label = std::size_t;
using Labels = std::vector<Label>;

struct LayerSpec {
  enum class Kind { kDense, kConv };
  Kind kind = Kind::kDense;
  std::size_t outputs = 0;  // dense width or conv output channels
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer list of a feed-forward classifier. ReLU follows every layer except
/// the last, whose width is the class count.
///
/// Text forms:
///   "mlp:2-64-64-2"                                  dense stack
///   "in=1x28x28 conv=16k5s2p2 conv=32k5s2p2 dense=10" general form
struct Architecture {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 0;
  std::vector<LayerSpec> layers;

  static Architecture parse(std::string_view text);
  static Architecture mlp(std::initializer_list<std::size_t> widths);
  std::string to_string() const;

  std::size_t input_size() const { return channels * height * width; }
  std::size_t classes() const;
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// K-class classifier h_theta. Parameters are stored as (weight, bias) pairs
/// per layer; dense weights are (inputs x outputs), conv weights are
/// (out_channels x in_channels x k x k).
class Classifier {
 public:
  // He-uniform weights, zero biases.
  Classifier(Architecture architecture, std::uint64_t seed);
  Classifier(Architecture architecture, std::vector<Tensor> parameters);

  static Classifier zeros(Architecture architecture);

  const Architecture& architecture() const noexcept { return architecture_; }
  std::size_t classes() const { return architecture_.classes(); }
  std::size_t input_size() const { return architecture_.input_size(); }

  std::vector<Tensor>& parameters() noexcept { return parameters_; }
  const std::vector<Tensor>& parameters() const noexcept { return parameters_; }

  // Records the forward pass on `tape`. With `track_parameters` false the
  // parameters enter as constants, so backward only reaches the input.
  Var forward(Tape& tape, Var input, bool track_parameters) const;

  // m x d -> m x K logits.
  Tensor forward(const Tensor& batch) const;

  // Order-sensitive hash of every parameter bit.
  std::uint64_t checksum() const;

 private:
  Architecture architecture_;
  std::vector<Tensor> parameters_;
};

/// Index of the largest logit; ties go to the lowest index.
Label predict_label(std::span<const double> logits);

std::vector<Label> predict_labels(const Tensor& logits);

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Momentum SGD: v <- mu*v + (g + wd*w); w <- w - lr*v.
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) {}

  void step(Classifier& model, const Gradients& grads);

  const SgdConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  SgdConfig config_;
  std::vector<Tensor> velocity_;
};

}  // namespace bt
