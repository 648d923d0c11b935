#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "bullettrain/tensor.hpp"

namespace bt {

/// Per-parameter gradients, aligned one-to-one with the parameter slots
/// registered on the tape.
template <typename T>
struct BasicGradients {
  std::vector<BasicTensor<T>> parameters;

  std::size_t size() const noexcept { return parameters.size(); }
  BasicTensor<T>& operator[](std::size_t i) { return parameters[i]; }
  const BasicTensor<T>& operator[](std::size_t i) const { return parameters[i]; }
};

using Gradients = BasicGradients<double>;

struct Conv2dGeometry {
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

/// Opaque handle to a value recorded on a tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Every operation computes its value eagerly and records
/// a closure that propagates the incoming gradient to its operands. Row-wise
/// operations never mix rows, so the values and input gradients of one batch
/// row do not depend on which other rows share the batch.
///
/// A tape is single-threaded and pinned in memory (closures refer to it).
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(TensorT value);
  // Leaf that receives a gradient (PGD reads it back through grad()).
  Var input(TensorT value);
  // Leaf whose gradient lands in Gradients::parameters[slot].
  Var parameter(const TensorT& value, std::size_t slot);

  const TensorT& value(Var v) const { return nodes_[v.id].value; }
  // Gradient accumulated by the last backward(); zeros if nothing flowed in.
  TensorT grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // x: m x n (trailing dims flattened), w: n x k, b: k  ->  m x k
  Var affine(Var x, Var w, Var b);
  Var matmul(Var a, Var b);
  // x: m x C x H x W (or flattened rows), w: O x C x k x k, b: O -> m x O x H' x W'
  Var conv2d(Var x, Var w, Var b, const Conv2dGeometry& geometry);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var log_floor(Var a, T floor);
  // Row-wise over the trailing dimension.
  Var log_softmax(Var x);
  Var softmax(Var x);
  Var row_sum(Var x);
  Var pick(Var x, std::span<const std::size_t> columns);
  Var sum(Var x);
  Var mean(Var x);
  Var gather_rows(Var x, std::span<const std::size_t> indices);
  Var concat_rows(std::span<const Var> parts);
  Var reshape(Var x, Shape shape);

  /// Gradients of a scalar root. Throws UsageError for non-scalar roots.
  BasicGradients<T> backward(Var root);

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    long parameter_slot = -1;
    std::function<void(const TensorT&)> propagate;
  };

  Var push(TensorT value, bool requires_grad, std::function<void(const TensorT&)> propagate);
  TensorT& grad_buffer(std::size_t id);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  std::deque<Node> nodes_;
  std::vector<Shape> parameter_shapes_;
};

using Tape = BasicTape<double>;
using TapeF = BasicTape<float>;

namespace kernels {

// Row-major GEMM variants, all accumulating into `c`.
// c[m x k] += a[m x n] * b[n x k]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);
// c[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);
// c[n x k] += a[m x n]^T * b[m x k]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);

}  // namespace kernels

}  // namespace bt
