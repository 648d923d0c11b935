#include "bullettrain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "bullettrain/errors.hpp"

namespace bt {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ArgumentError("tensor shape " + shape_string(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
  }
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) {
    throw UsageError("item() on a tensor with " + std::to_string(data_.size()) + " elements");
  }
  return data_[0];
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& source, std::span<const std::size_t> indices) {
  Shape shape = source.shape();
  if (shape.empty()) throw UsageError("gather_rows on a scalar");
  const std::size_t cols = source.cols();
  shape[0] = indices.size();
  std::vector<T> data(indices.size() * cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= source.rows()) throw ArgumentError("gather_rows index out of range");
    auto row = source.row(indices[i]);
    std::copy(row.begin(), row.end(), data.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return BasicTensor<T>(std::move(shape), std::move(data));
}

namespace {

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite input to ") + what);
  }
}

template <typename T>
void require_distribution(std::span<const T> p, const char* what) {
  require_finite(p, what);
  T total = 0;
  for (T v : p) {
    if (v < T{0}) throw ArgumentError(std::string(what) + ": negative probability");
    total += v;
  }
  if (std::abs(static_cast<double>(total) - 1.0) > 1e-6) {
    throw ArgumentError(std::string(what) + ": probabilities sum to " +
                        std::to_string(static_cast<double>(total)));
  }
}

}  // namespace

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.size() < 2) throw ArgumentError("softmax needs at least two classes");
  require_finite(logits, "softmax");
  const T top = *std::max_element(logits.begin(), logits.end());
  std::vector<T> out(logits.size());
  T total = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - top);
    total += out[k];
  }
  for (T& v : out) v /= total;
  return out;
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> logits) {
  if (logits.size() < 2) throw ArgumentError("log_softmax needs at least two classes");
  require_finite(logits, "log_softmax");
  const T top = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (T z : logits) total += std::exp(z - top);
  const T log_norm = top + std::log(total);
  std::vector<T> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - log_norm;
  return out;
}

template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ArgumentError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(logits.size()) + " classes");
  }
  return -log_softmax(logits)[label];
}

template <typename T>
T kl_divergence(std::span<const T> p, std::span<const T> q) {
  if (p.size() != q.size()) throw ArgumentError("kl_divergence: size mismatch");
  require_distribution(p, "kl_divergence");
  require_distribution(q, "kl_divergence");
  const T floor = static_cast<T>(kProbabilityFloor);
  T total = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= T{0}) continue;
    total += p[k] * (std::log(std::max(p[k], floor)) - std::log(std::max(q[k], floor)));
  }
  // Rounding can leave a tiny negative residue when p and q agree.
  return std::max(total, T{0});
}

template <typename T>
T prediction_variance(std::span<const T> probs) {
  require_distribution(probs, "prediction_variance");
  const auto [lo, hi] = std::minmax_element(probs.begin(), probs.end());
  if (*lo == *hi) return T{0};
  const T n = static_cast<T>(probs.size());
  T mean = 0;
  for (T v : probs) mean += v;
  mean /= n;
  T acc = 0;
  for (T v : probs) acc += (v - mean) * (v - mean);
  return acc / n;
}

#define BT_INSTANTIATE(T)                                                                  \
  template class BasicTensor<T>;                                                           \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::size_t>); \
  template std::vector<T> softmax(std::span<const T>);                                     \
  template std::vector<T> log_softmax(std::span<const T>);                                 \
  template T cross_entropy(std::span<const T>, std::size_t);                               \
  template T kl_divergence(std::span<const T>, std::span<const T>);                        \
  template T prediction_variance(std::span<const T>);

BT_INSTANTIATE(double)
BT_INSTANTIATE(float)

#undef BT_INSTANTIATE

}  // namespace bt
