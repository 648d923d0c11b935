#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. The first dimension is treated as the batch
/// dimension by every batched operation (`rows()` x `cols()` view).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view: rows = leading dimension, cols = everything else.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  T item() const;
  bool all_finite() const noexcept;

  // Same data, new shape with the same element count.
  BasicTensor reshaped(Shape shape) const;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

// Rows of `source` selected by `indices`, in that order.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& source, std::span<const std::size_t> indices);

// Probability helpers over a single logit / probability vector.

/// Max-subtracted softmax. Throws NumericError on non-finite input,
/// ArgumentError when fewer than two classes are given.
template <typename T>
std::vector<T> softmax(std::span<const T> logits);

template <typename T>
std::vector<T> log_softmax(std::span<const T> logits);

/// -log softmax(logits)[label].
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t label);

/// KL(p || q) with q floored at kProbabilityFloor. Both inputs must sum to 1
/// within 1e-6.
template <typename T>
T kl_divergence(std::span<const T> p, std::span<const T> q);

/// Population variance of the class probabilities.
template <typename T>
T prediction_variance(std::span<const T> probs);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace bt
