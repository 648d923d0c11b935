#include "bullettrain/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bullettrain/errors.hpp"

namespace bt {

namespace kernels {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * k;
    const T* arow = a + i * n;
    for (std::size_t p = 0; p < n; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* brow = b + p * k;
      for (std::size_t j = 0; j < k; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    const T* brow = b + i * k;
    for (std::size_t p = 0; p < n; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      T* crow = c + p * k;
      for (std::size_t j = 0; j < k; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernels

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                        shape_string(b));
  }
}

// Unrolls padded k x k patches of one C x H x W image into a (C*k*k) x (Ho*Wo) matrix.
template <typename T>
void im2col(const T* image, const Conv2dGeometry& g, T* col) {
  const std::size_t ho = g.out_height();
  const std::size_t wo = g.out_width();
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++r) {
        T* out = col + r * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            out[oy * wo + ox] =
                inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                               static_cast<std::size_t>(ix)]
                       : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Conv2dGeometry& g, T* image) {
  const std::size_t ho = g.out_height();
  const std::size_t wo = g.out_width();
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++r) {
        const T* in = col + r * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] += in[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var BasicTape<T>::push(TensorT value, bool requires_grad,
                       std::function<void(const TensorT&)> propagate) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.propagate = std::move(propagate);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename BasicTape<T>::TensorT& BasicTape<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty() && !node.value.empty()) node.grad = TensorT(node.value.shape(), T{0});
  return node.grad;
}

template <typename T>
typename BasicTape<T>::TensorT BasicTape<T>::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty()) return TensorT(node.value.shape(), T{0});
  return node.grad;
}

template <typename T>
Var BasicTape<T>::constant(TensorT value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var BasicTape<T>::input(TensorT value) {
  return push(std::move(value), true, [](const TensorT&) {});
}

template <typename T>
Var BasicTape<T>::parameter(const TensorT& value, std::size_t slot) {
  Var v = push(value, true, [](const TensorT&) {});
  nodes_[v.id].parameter_slot = static_cast<long>(slot);
  if (parameter_shapes_.size() <= slot) parameter_shapes_.resize(slot + 1);
  parameter_shapes_[slot] = value.shape();
  return v;
}

template <typename T>
Var BasicTape<T>::matmul(Var a, Var b) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  if (bv.rank() != 2 || av.cols() != bv.dim(0)) {
    throw ArgumentError("matmul: inner dimensions " + shape_string(av.shape()) + " x " +
                        shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), n = av.cols(), k = bv.dim(1);
  TensorT out(Shape{m, k});
  kernels::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, n, k);
  const bool rg = needs(a) || needs(b);
  return push(std::move(out), rg, [this, a, b, m, n, k](const TensorT& g) {
    if (needs(a)) {
      kernels::gemm_nt(g.data().data(), value(b).data().data(), grad_buffer(a.id).data().data(),
                       m, n, k);
    }
    if (needs(b)) {
      kernels::gemm_tn(value(a).data().data(), g.data().data(), grad_buffer(b.id).data().data(),
                       m, n, k);
    }
  });
}

template <typename T>
Var BasicTape<T>::affine(Var x, Var w, Var b) {
  const TensorT& xv = value(x);
  const TensorT& wv = value(w);
  const TensorT& bv = value(b);
  if (wv.rank() != 2 || xv.cols() != wv.dim(0)) {
    throw ArgumentError("affine: input " + shape_string(xv.shape()) + " does not fit weights " +
                        shape_string(wv.shape()));
  }
  const std::size_t m = xv.rows(), n = xv.cols(), k = wv.dim(1);
  if (bv.size() != k) throw ArgumentError("affine: bias size mismatch");
  TensorT out(Shape{m, k});
  T* o = out.data().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.data().begin(), bv.data().end(), o + i * k);
  kernels::gemm_nn(xv.data().data(), wv.data().data(), o, m, n, k);
  const bool rg = needs(x) || needs(w) || needs(b);
  return push(std::move(out), rg, [this, x, w, b, m, n, k](const TensorT& g) {
    if (needs(x)) {
      kernels::gemm_nt(g.data().data(), value(w).data().data(), grad_buffer(x.id).data().data(),
                       m, n, k);
    }
    if (needs(w)) {
      kernels::gemm_tn(value(x).data().data(), g.data().data(), grad_buffer(w.id).data().data(),
                       m, n, k);
    }
    if (needs(b)) {
      T* gb = grad_buffer(b.id).data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) gb[j] += g[i * k + j];
    }
  });
}

template <typename T>
Var BasicTape<T>::conv2d(Var x, Var w, Var b, const Conv2dGeometry& geo) {
  const TensorT& xv = value(x);
  const TensorT& wv = value(w);
  const std::size_t patch = geo.in_channels * geo.kernel * geo.kernel;
  if (xv.cols() != geo.in_channels * geo.height * geo.width) {
    throw ArgumentError("conv2d: input " + shape_string(xv.shape()) + " does not match geometry");
  }
  if (wv.size() != geo.out_channels * patch || value(b).size() != geo.out_channels) {
    throw ArgumentError("conv2d: weight/bias size mismatch");
  }
  if (geo.kernel == 0 || geo.stride == 0 || geo.height + 2 * geo.padding < geo.kernel ||
      geo.width + 2 * geo.padding < geo.kernel) {
    throw ArgumentError("conv2d: invalid geometry");
  }
  const std::size_t m = xv.rows();
  const std::size_t spatial = geo.out_height() * geo.out_width();
  const std::size_t in_size = xv.cols();
  const std::size_t out_size = geo.out_channels * spatial;
  TensorT out(Shape{m, geo.out_channels, geo.out_height(), geo.out_width()});
  std::vector<T> col(patch * spatial);
  const T* bias = value(b).data().data();
  for (std::size_t s = 0; s < m; ++s) {
    im2col(xv.data().data() + s * in_size, geo, col.data());
    T* o = out.data().data() + s * out_size;
    for (std::size_t oc = 0; oc < geo.out_channels; ++oc)
      std::fill(o + oc * spatial, o + (oc + 1) * spatial, bias[oc]);
    kernels::gemm_nn(wv.data().data(), col.data(), o, geo.out_channels, patch, spatial);
  }
  const bool rg = needs(x) || needs(w) || needs(b);
  return push(std::move(out), rg,
              [this, x, w, b, geo, m, patch, spatial, in_size, out_size](const TensorT& g) {
                std::vector<T> cols(patch * spatial);
                std::vector<T> dcol(patch * spatial);
                for (std::size_t s = 0; s < m; ++s) {
                  const T* gs = g.data().data() + s * out_size;
                  if (needs(w)) {
                    im2col(value(x).data().data() + s * in_size, geo, cols.data());
                    kernels::gemm_nt(gs, cols.data(), grad_buffer(w.id).data().data(),
                                     geo.out_channels, patch, spatial);
                  }
                  if (needs(b)) {
                    T* gb = grad_buffer(b.id).data().data();
                    for (std::size_t oc = 0; oc < geo.out_channels; ++oc)
                      for (std::size_t p = 0; p < spatial; ++p) gb[oc] += gs[oc * spatial + p];
                  }
                  if (needs(x)) {
                    std::fill(dcol.begin(), dcol.end(), T{0});
                    kernels::gemm_tn(value(w).data().data(), gs, dcol.data(), geo.out_channels,
                                     patch, spatial);
                    col2im(dcol.data(), geo, grad_buffer(x.id).data().data() + s * in_size);
                  }
                }
              });
}

template <typename T>
Var BasicTape<T>::relu(Var x) {
  TensorT out = value(x);
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return push(std::move(out), needs(x), [this, x](const TensorT& g) {
    const TensorT& in = value(x);
    TensorT& gx = grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > T{0}) gx[i] += g[i];
  });
}

template <typename T>
Var BasicTape<T>::add(Var a, Var b) {
  require_same_shape(value(a).shape(), value(b).shape(), "add");
  TensorT out = value(a);
  const TensorT& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), needs(a) || needs(b), [this, a, b](const TensorT& g) {
    if (needs(a)) {
      TensorT& ga = grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs(b)) {
      TensorT& gb = grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Var BasicTape<T>::sub(Var a, Var b) {
  require_same_shape(value(a).shape(), value(b).shape(), "sub");
  TensorT out = value(a);
  const TensorT& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return push(std::move(out), needs(a) || needs(b), [this, a, b](const TensorT& g) {
    if (needs(a)) {
      TensorT& ga = grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs(b)) {
      TensorT& gb = grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var BasicTape<T>::mul(Var a, Var b) {
  require_same_shape(value(a).shape(), value(b).shape(), "mul");
  TensorT out = value(a);
  const TensorT& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), needs(a) || needs(b), [this, a, b](const TensorT& g) {
    if (needs(a)) {
      TensorT& ga = grad_buffer(a.id);
      const TensorT& bv = value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (needs(b)) {
      TensorT& gb = grad_buffer(b.id);
      const TensorT& av = value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var BasicTape<T>::scale(Var a, T factor) {
  TensorT out = value(a);
  for (T& v : out.data()) v *= factor;
  return push(std::move(out), needs(a), [this, a, factor](const TensorT& g) {
    TensorT& ga = grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var BasicTape<T>::log_floor(Var a, T floor) {
  TensorT out = value(a);
  for (T& v : out.data()) v = std::log(std::max(v, floor));
  return push(std::move(out), needs(a), [this, a, floor](const TensorT& g) {
    const TensorT& av = value(a);
    TensorT& ga = grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > floor) ga[i] += g[i] / av[i];
  });
}

template <typename T>
Var BasicTape<T>::log_softmax(Var x) {
  const TensorT& xv = value(x);
  const std::size_t m = xv.rows(), k = xv.cols();
  TensorT out(Shape{m, k});
  for (std::size_t i = 0; i < m; ++i) {
    auto r = xv.row(i);
    const T top = *std::max_element(r.begin(), r.end());
    T total = 0;
    for (T z : r) total += std::exp(z - top);
    const T log_norm = top + std::log(total);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = r[j] - log_norm;
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out), needs(x), [this, x, m, k, self](const TensorT& g) {
    // Row gradient: g - softmax * sum(g), with softmax = exp(log_softmax).
    const TensorT& y = nodes_[self].value;
    TensorT& gx = grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      T gsum = 0;
      for (std::size_t j = 0; j < k; ++j) gsum += g[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i * k + j] - std::exp(y[i * k + j]) * gsum;
    }
  });
}

template <typename T>
Var BasicTape<T>::softmax(Var x) {
  const TensorT& xv = value(x);
  const std::size_t m = xv.rows(), k = xv.cols();
  TensorT out(Shape{m, k});
  for (std::size_t i = 0; i < m; ++i) {
    auto r = xv.row(i);
    const T top = *std::max_element(r.begin(), r.end());
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(r[j] - top);
      total += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= total;
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out), needs(x), [this, x, m, k, self](const TensorT& g) {
    const TensorT& p = nodes_[self].value;
    TensorT& gx = grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * p[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += p[i * k + j] * (g[i * k + j] - dot);
    }
  });
}

template <typename T>
Var BasicTape<T>::row_sum(Var x) {
  const TensorT& xv = value(x);
  const std::size_t m = xv.rows(), k = xv.cols();
  TensorT out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += xv[i * k + j];
    out[i] = acc;
  }
  return push(std::move(out), needs(x), [this, x, m, k](const TensorT& g) {
    TensorT& gx = grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i];
  });
}

template <typename T>
Var BasicTape<T>::pick(Var x, std::span<const std::size_t> columns) {
  const TensorT& xv = value(x);
  const std::size_t m = xv.rows(), k = xv.cols();
  if (columns.size() != m) throw ArgumentError("pick: one column per row required");
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  TensorT out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= k) {
      throw ArgumentError("label " + std::to_string(cols[i]) + " out of range for " +
                          std::to_string(k) + " classes");
    }
    out[i] = xv[i * k + cols[i]];
  }
  return push(std::move(out), needs(x), [this, x, k, cols = std::move(cols)](const TensorT& g) {
    TensorT& gx = grad_buffer(x.id);
    for (std::size_t i = 0; i < cols.size(); ++i) gx[i * k + cols[i]] += g[i];
  });
}

template <typename T>
Var BasicTape<T>::sum(Var x) {
  T acc = 0;
  for (T v : value(x).data()) acc += v;
  return push(TensorT::scalar(acc), needs(x), [this, x](const TensorT& g) {
    TensorT& gx = grad_buffer(x.id);
    for (T& v : gx.data()) v += g[0];
  });
}

template <typename T>
Var BasicTape<T>::mean(Var x) {
  const std::size_t n = value(x).size();
  if (n == 0) throw ArgumentError("mean of an empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(n));
}

template <typename T>
Var BasicTape<T>::gather_rows(Var x, std::span<const std::size_t> indices) {
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  TensorT out = bt::gather_rows(value(x), std::span<const std::size_t>(idx));
  const std::size_t cols = value(x).cols();
  return push(std::move(out), needs(x), [this, x, cols, idx = std::move(idx)](const TensorT& g) {
    TensorT& gx = grad_buffer(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) gx[idx[i] * cols + j] += g[i * cols + j];
  });
}

template <typename T>
Var BasicTape<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows of nothing");
  Shape shape = value(parts[0]).shape();
  if (shape.empty()) throw ArgumentError("concat_rows of scalars");
  std::vector<T> data;
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    const TensorT& v = value(p);
    Shape tail(v.shape().begin() + 1, v.shape().end());
    if (v.rank() != shape.size() || tail != Shape(shape.begin() + 1, shape.end())) {
      throw ArgumentError("concat_rows: trailing shape mismatch");
    }
    data.insert(data.end(), v.data().begin(), v.data().end());
    rows += v.rows();
    rg = rg || needs(p);
  }
  shape[0] = rows;
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(TensorT(std::move(shape), std::move(data)), rg,
              [this, ps = std::move(ps)](const TensorT& g) {
                std::size_t offset = 0;
                for (Var p : ps) {
                  const std::size_t n = value(p).size();
                  if (needs(p)) {
                    TensorT& gp = grad_buffer(p.id);
                    for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
                  }
                  offset += n;
                }
              });
}

template <typename T>
Var BasicTape<T>::reshape(Var x, Shape shape) {
  TensorT out = value(x).reshaped(std::move(shape));
  return push(std::move(out), needs(x), [this, x](const TensorT& g) {
    TensorT& gx = grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
BasicGradients<T> BasicTape<T>::backward(Var root) {
  if (root.id >= nodes_.size()) throw UsageError("backward: unknown root");
  if (nodes_[root.id].value.size() != 1) {
    throw UsageError("backward needs a scalar root, got shape " +
                     shape_string(nodes_[root.id].value.shape()));
  }
  for (Node& n : nodes_) n.grad = TensorT();

  BasicGradients<T> out;
  out.parameters.reserve(parameter_shapes_.size());
  for (const Shape& s : parameter_shapes_) out.parameters.emplace_back(s, T{0});

  if (!nodes_[root.id].requires_grad) return out;
  grad_buffer(root.id)[0] = T{1};
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.parameter_slot >= 0) {
      auto& dst = out.parameters[static_cast<std::size_t>(node.parameter_slot)];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
    }
    if (node.propagate) node.propagate(node.grad);
  }
  return out;
}

template class BasicTape<double>;
template class BasicTape<float>;

template void kernels::gemm_nn(const double*, const double*, double*, std::size_t, std::size_t,
                               std::size_t);
template void kernels::gemm_nt(const double*, const double*, double*, std::size_t, std::size_t,
                               std::size_t);
template void kernels::gemm_tn(const double*, const double*, double*, std::size_t, std::size_t,
                               std::size_t);
template void kernels::gemm_nn(const float*, const float*, float*, std::size_t, std::size_t,
                               std::size_t);
template void kernels::gemm_nt(const float*, const float*, float*, std::size_t, std::size_t,
                               std::size_t);
template void kernels::gemm_tn(const float*, const float*, float*, std::size_t, std::size_t,
                               std::size_t);

}  // namespace bt
