#include "bullettrain/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "bullettrain/errors.hpp"
#include "bullettrain/rng.hpp"

namespace bt {

namespace {

std::size_t parse_count(std::string_view text, std::string_view context) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ArgumentError("architecture: bad number '" + std::string(text) + "' in '" +
                        std::string(context) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = text.find(sep);
    out.push_back(text.substr(0, pos));
    if (pos == std::string_view::npos) break;
    text.remove_prefix(pos + 1);
  }
  return out;
}

// "16k5s2p2" -> conv layer; stride and padding optional.
LayerSpec parse_conv(std::string_view token) {
  LayerSpec spec;
  spec.kind = LayerSpec::Kind::kConv;
  const auto k = token.find('k');
  if (k == std::string_view::npos) throw ArgumentError("conv layer needs a kernel: " + std::string(token));
  spec.outputs = parse_count(token.substr(0, k), token);
  std::string_view rest = token.substr(k + 1);
  const auto s = rest.find('s');
  const auto p = rest.find('p');
  const auto kernel_end = std::min(s, p);
  spec.kernel = parse_count(rest.substr(0, kernel_end), token);
  if (s != std::string_view::npos) {
    spec.stride = parse_count(rest.substr(s + 1, p == std::string_view::npos ? p : p - s - 1), token);
  }
  if (p != std::string_view::npos) spec.padding = parse_count(rest.substr(p + 1), token);
  return spec;
}

Conv2dGeometry conv_geometry(std::size_t c, std::size_t h, std::size_t w, const LayerSpec& spec) {
  Conv2dGeometry g;
  g.in_channels = c;
  g.height = h;
  g.width = w;
  g.out_channels = spec.outputs;
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.padding = spec.padding;
  return g;
}

}  // namespace

Architecture Architecture::parse(std::string_view text) {
  Architecture arch;
  if (text.starts_with("mlp:")) {
    auto widths = split(text.substr(4), '-');
    if (widths.size() < 2) throw ArgumentError("mlp architecture needs input and output widths");
    arch.width = parse_count(widths[0], text);
    for (std::size_t i = 1; i < widths.size(); ++i) {
      arch.layers.push_back(LayerSpec{LayerSpec::Kind::kDense, parse_count(widths[i], text)});
    }
    arch.validate();
    return arch;
  }
  std::istringstream in{std::string(text)};
  std::string token;
  bool have_input = false;
  while (in >> token) {
    std::string_view tok = token;
    if (tok.starts_with("in=")) {
      auto dims = split(tok.substr(3), 'x');
      if (dims.size() == 1) {
        arch.width = parse_count(dims[0], text);
      } else if (dims.size() == 3) {
        arch.channels = parse_count(dims[0], text);
        arch.height = parse_count(dims[1], text);
        arch.width = parse_count(dims[2], text);
      } else {
        throw ArgumentError("architecture: input must be 'in=D' or 'in=CxHxW'");
      }
      have_input = true;
    } else if (tok.starts_with("dense=")) {
      arch.layers.push_back(LayerSpec{LayerSpec::Kind::kDense, parse_count(tok.substr(6), text)});
    } else if (tok.starts_with("conv=")) {
      arch.layers.push_back(parse_conv(tok.substr(5)));
    } else {
      throw ArgumentError("architecture: unknown token '" + token + "'");
    }
  }
  if (!have_input) throw ArgumentError("architecture: missing 'in=' token");
  arch.validate();
  return arch;
}

Architecture Architecture::mlp(std::initializer_list<std::size_t> widths) {
  Architecture arch;
  auto it = widths.begin();
  arch.width = *it++;
  for (; it != widths.end(); ++it) arch.layers.push_back(LayerSpec{LayerSpec::Kind::kDense, *it});
  arch.validate();
  return arch;
}

std::string Architecture::to_string() const {
  const bool plain_mlp = channels == 1 && height == 1 &&
                         std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
                           return l.kind == LayerSpec::Kind::kDense;
                         });
  std::ostringstream out;
  if (plain_mlp) {
    out << "mlp:" << width;
    for (const auto& l : layers) out << '-' << l.outputs;
    return out.str();
  }
  out << "in=" << channels << 'x' << height << 'x' << width;
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::kDense) {
      out << " dense=" << l.outputs;
    } else {
      out << " conv=" << l.outputs << 'k' << l.kernel << 's' << l.stride << 'p' << l.padding;
    }
  }
  return out.str();
}

std::size_t Architecture::classes() const {
  if (layers.empty()) throw ArgumentError("architecture has no layers");
  return layers.back().outputs;
}

void Architecture::validate() const {
  if (input_size() == 0) throw ArgumentError("architecture: empty input");
  if (layers.empty()) throw ArgumentError("architecture: no layers");
  if (layers.back().kind != LayerSpec::Kind::kDense) {
    throw ArgumentError("architecture: last layer must be dense");
  }
  if (classes() < 2) throw ArgumentError("architecture: need at least two classes");
  std::size_t c = channels, h = height, w = width;
  bool flat = false;
  for (const auto& l : layers) {
    if (l.outputs == 0) throw ArgumentError("architecture: zero-width layer");
    if (l.kind == LayerSpec::Kind::kConv) {
      if (flat) throw ArgumentError("architecture: conv layer after dense layer");
      if (l.kernel == 0 || l.stride == 0 || h + 2 * l.padding < l.kernel ||
          w + 2 * l.padding < l.kernel) {
        throw ArgumentError("architecture: conv kernel does not fit its input");
      }
      const auto g = conv_geometry(c, h, w, l);
      c = l.outputs;
      h = g.out_height();
      w = g.out_width();
    } else {
      flat = true;
    }
  }
}

Classifier::Classifier(Architecture architecture, std::uint64_t seed)
    : architecture_(std::move(architecture)) {
  architecture_.validate();
  Rng rng = make_rng({seed, tag(Stream::kInit)});
  std::size_t c = architecture_.channels, h = architecture_.height, w = architecture_.width;
  for (const auto& l : architecture_.layers) {
    std::size_t fan_in = 0;
    Shape wshape;
    if (l.kind == LayerSpec::Kind::kConv) {
      fan_in = c * l.kernel * l.kernel;
      wshape = {l.outputs, c, l.kernel, l.kernel};
      const auto g = conv_geometry(c, h, w, l);
      c = l.outputs;
      h = g.out_height();
      w = g.out_width();
    } else {
      fan_in = c * h * w;
      wshape = {fan_in, l.outputs};
      c = l.outputs;
      h = w = 1;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor weights(wshape);
    for (double& v : weights.data()) v = dist(rng);
    parameters_.push_back(std::move(weights));
    parameters_.emplace_back(Shape{l.outputs}, 0.0);
  }
}

Classifier::Classifier(Architecture architecture, std::vector<Tensor> parameters)
    : architecture_(std::move(architecture)), parameters_(std::move(parameters)) {
  architecture_.validate();
  Classifier reference = zeros(architecture_);
  if (reference.parameters_.size() != parameters_.size()) {
    throw ArgumentError("classifier: expected " + std::to_string(reference.parameters_.size()) +
                        " parameter tensors, got " + std::to_string(parameters_.size()));
  }
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    if (reference.parameters_[i].shape() != parameters_[i].shape()) {
      throw ArgumentError("classifier: parameter " + std::to_string(i) + " has shape " +
                          shape_string(parameters_[i].shape()) + ", expected " +
                          shape_string(reference.parameters_[i].shape()));
    }
  }
}

Classifier Classifier::zeros(Architecture architecture) {
  Classifier model(std::move(architecture), std::uint64_t{0});
  for (auto& p : model.parameters_) std::fill(p.data().begin(), p.data().end(), 0.0);
  return model;
}

Var Classifier::forward(Tape& tape, Var input, bool track_parameters) const {
  const Tensor& x = tape.value(input);
  if (x.cols() != input_size()) {
    throw ArgumentError("forward: input has " + std::to_string(x.cols()) +
                        " features, model expects " + std::to_string(input_size()));
  }
  auto param = [&](std::size_t slot) {
    return track_parameters ? tape.parameter(parameters_[slot], slot)
                            : tape.constant(parameters_[slot]);
  };
  std::size_t c = architecture_.channels, h = architecture_.height, w = architecture_.width;
  Var act = input;
  for (std::size_t i = 0; i < architecture_.layers.size(); ++i) {
    const auto& l = architecture_.layers[i];
    Var weight = param(2 * i);
    Var bias = param(2 * i + 1);
    if (l.kind == LayerSpec::Kind::kConv) {
      const auto g = conv_geometry(c, h, w, l);
      act = tape.conv2d(act, weight, bias, g);
      c = l.outputs;
      h = g.out_height();
      w = g.out_width();
    } else {
      act = tape.affine(act, weight, bias);
    }
    if (i + 1 < architecture_.layers.size()) act = tape.relu(act);
  }
  return act;
}

Tensor Classifier::forward(const Tensor& batch) const {
  Tape tape;
  Var out = forward(tape, tape.constant(batch), false);
  return tape.value(out);
}

std::uint64_t Classifier::checksum() const {
  std::uint64_t h = 0;
  for (const auto& p : parameters_) {
    for (double v : p.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof bits);
      h = mix64(h ^ bits);
    }
  }
  return h;
}

Label predict_label(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("predict_label on empty logits");
  Label best = 0;
  for (Label k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

std::vector<Label> predict_labels(const Tensor& logits) {
  std::vector<Label> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = predict_label(logits.row(i));
  return out;
}

void Sgd::step(Classifier& model, const Gradients& grads) {
  auto& params = model.parameters();
  if (grads.size() != params.size()) {
    throw UsageError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.shape(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw UsageError("sgd_step: gradient " + std::to_string(i) + " shape " +
                       shape_string(grads[i].shape()) + " does not match parameter " +
                       shape_string(params[i].shape()));
    }
    auto w = params[i].data();
    auto v = velocity_[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = config_.momentum * v[j] + (g[j] + config_.weight_decay * w[j]);
      w[j] -= config_.learning_rate * v[j];
    }
  }
}

}  // namespace bt
