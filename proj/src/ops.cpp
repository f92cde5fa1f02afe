#include "mst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mst/errors.hpp"

namespace mst {

namespace {

template <typename T>
using Impl = TensorImpl<T>;

template <typename T>
Impl<T>& input(const Impl<T>& out, std::size_t i) {
  return *out.node->inputs[i];
}

// Number of trailing elements `b` covers when broadcast against `a`.
template <typename T>
std::size_t broadcast_inner(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  }
  return b.numel();
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Bwd bwd) {
  const std::size_t inner = broadcast_inner(op, a, b);
  const std::size_t n = a.numel();
  std::vector<T> y(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(av[i], bv[i % inner]);
  return make_result<T>(op, a.shape(), std::move(y), {a, b}, [inner, bwd](const Impl<T>& out) {
    Impl<T>& A = input(out, 0);
    Impl<T>& B = input(out, 1);
    T* ga = A.requires_grad ? A.grad_buffer().data() : nullptr;
    T* gb = B.requires_grad ? B.grad_buffer().data() : nullptr;
    const std::size_t n = out.data.size();
    for (std::size_t i = 0; i < n; ++i) {
      T da = 0, db = 0;
      bwd(out.grad[i], A.data[i], B.data[i % inner], da, db);
      if (ga) ga[i] += da;
      if (gb) gb[i % inner] += db;
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.numel();
  std::vector<T> y(n);
  const auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(av[i]);
  return make_result<T>(op, a.shape(), std::move(y), {a}, [deriv](const Impl<T>& out) {
    Impl<T>& A = input(out, 0);
    auto& ga = A.grad_buffer();
    for (std::size_t i = 0; i < out.data.size(); ++i) ga[i] += out.grad[i] * deriv(A.data[i], out.data[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T g, T, T, T& da, T& db) {
        da = g;
        db = g;
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T g, T, T, T& da, T& db) {
        da = g;
        db = -g;
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T g, T x, T y, T& da, T& db) {
        da = g * y;
        db = g * x;
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T g, T x, T y, T& da, T& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary<T>(
      "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  std::vector<T> c(m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return make_result<T>("matmul", {m, n}, std::move(c), {a, b}, [m, k, n](const Impl<T>& out) {
    Impl<T>& A = input(out, 0);
    Impl<T>& B = input(out, 1);
    const T* G = out.grad.data();
    if (A.requires_grad) {
      T* ga = A.grad_buffer().data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = B.data.data() + p * n;
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (B.requires_grad) {
      T* gb = B.grad_buffer().data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = A.data[i * k + p];
          T* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x.shape(), 2, "linear");
  require_rank(w.shape(), 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k || b.shape() != Shape{n}) {
    throw ShapeError("linear: " + shape_str(x.shape()) + " . " + shape_str(w.shape()) + " + " +
                     shape_str(b.shape()));
  }
  std::vector<T> c(m * n);
  const T* X = x.data().data();
  const T* W = w.data().data();
  const T* bias = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    std::copy(bias, bias + n, crow);
    for (std::size_t p = 0; p < k; ++p) {
      const T xip = X[i * k + p];
      const T* wrow = W + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += xip * wrow[j];
    }
  }
  return make_result<T>("linear", {m, n}, std::move(c), {x, w, b}, [m, k, n](const Impl<T>& out) {
    Impl<T>& X = input(out, 0);
    Impl<T>& W = input(out, 1);
    Impl<T>& B = input(out, 2);
    const T* G = out.grad.data();
    if (X.requires_grad) {
      T* gx = X.grad_buffer().data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T* wrow = W.data.data() + p * n;
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
          gx[i * k + p] += acc;
        }
      }
    }
    if (W.requires_grad) {
      T* gw = W.grad_buffer().data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T xip = X.data[i * k + p];
          T* gwrow = gw + p * n;
          for (std::size_t j = 0; j < n; ++j) gwrow[j] += xip * grow[j];
        }
      }
    }
    if (B.requires_grad) {
      T* gb = B.grad_buffer().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += G[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> y(r * c);
  const auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = av[i * c + j];
  return make_result<T>("transpose", {c, r}, std::move(y), {a}, [r, c](const Impl<T>& out) {
    auto& ga = input(out, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += out.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> y(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(y), {a}, [](const Impl<T>& out) {
    auto& ga = input(out, 0).grad_buffer();
    for (std::size_t i = 0; i < out.grad.size(); ++i) ga[i] += out.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const AxisSplit base = split_axis(first, axis, "concat");
  std::vector<std::size_t> widths;  // per-part contiguous chunk per outer index
  std::size_t total_extent = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    widths.push_back(s[axis] * base.inner);
    total_extent += s[axis];
  }
  Shape shape = first;
  shape[axis] = total_extent;
  const std::size_t row = total_extent * base.inner;
  std::vector<T> y(base.outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pv = parts[p].data();
    for (std::size_t o = 0; o < base.outer; ++o)
      std::copy_n(pv.begin() + o * widths[p], widths[p], y.begin() + o * row + offset);
    offset += widths[p];
  }
  const std::size_t outer = base.outer;
  return make_result<T>("concat", std::move(shape), std::move(y), parts, [outer, row, widths](const Impl<T>& out) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      Impl<T>& P = input(out, p);
      if (P.requires_grad) {
        auto& gp = P.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[p]; ++i) gp[o * widths[p] + i] += out.grad[o * row + offset + i];
      }
      offset += widths[p];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t length) {
  const AxisSplit s = split_axis(a.shape(), axis, "slice");
  if (length == 0 || begin + length > s.extent) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                     ") out of range for axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = length;
  const std::size_t src_row = s.extent * s.inner;
  const std::size_t dst_row = length * s.inner;
  const std::size_t start = begin * s.inner;
  std::vector<T> y(s.outer * dst_row);
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(av.begin() + o * src_row + start, dst_row, y.begin() + o * dst_row);
  const std::size_t outer = s.outer;
  return make_result<T>("slice", std::move(shape), std::move(y), {a},
                        [outer, src_row, dst_row, start](const Impl<T>& out) {
                          auto& ga = input(out, 0).grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < dst_row; ++i)
                              ga[o * src_row + start + i] += out.grad[o * dst_row + i];
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  return make_result<T>("sum", {}, {acc}, {a}, [](const Impl<T>& out) {
    auto& ga = input(out, 0).grad_buffer();
    for (T& g : ga) g += out.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_result<T>("mean", {}, {acc * inv}, {a}, [inv](const Impl<T>& out) {
    auto& ga = input(out, 0).grad_buffer();
    for (T& g : ga) g += out.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& a) {
  if (a.rank() == 0) throw ShapeError("l2_norm: needs at least one axis");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<T> y(rows);
  const auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < c; ++j) acc += av[r * c + j] * av[r * c + j];
    y[r] = std::sqrt(acc);
  }
  return make_result<T>("l2_norm", std::move(shape), std::move(y), {a}, [rows, c](const Impl<T>& out) {
    Impl<T>& A = input(out, 0);
    auto& ga = A.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      if (out.data[r] == T(0)) continue;
      const T f = out.grad[r] / out.data[r];
      for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += f * A.data[r * c + j];
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "softmax");
  std::vector<T> y(a.numel());
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, av[base + j * s.inner]);
      T z = 0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const T e = std::exp(av[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) y[base + j * s.inner] /= z;
    }
  }
  return make_result<T>("softmax", a.shape(), std::move(y), {a}, [s](const Impl<T>& out) {
    auto& ga = input(out, 0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < s.extent; ++j) dot += out.grad[base + j * s.inner] * out.data[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t idx = base + j * s.inner;
          ga[idx] += out.data[idx] * (out.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "log_softmax");
  std::vector<T> y(a.numel());
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, av[base + j * s.inner]);
      T z = 0;
      for (std::size_t j = 0; j < s.extent; ++j) z += std::exp(av[base + j * s.inner] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.extent; ++j) y[base + j * s.inner] = av[base + j * s.inner] - lse;
    }
  }
  return make_result<T>("log_softmax", a.shape(), std::move(y), {a}, [s](const Impl<T>& out) {
    auto& ga = input(out, 0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T gsum = 0;
        for (std::size_t j = 0; j < s.extent; ++j) gsum += out.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t idx = base + j * s.inner;
          ga[idx] += out.grad[idx] - std::exp(out.data[idx]) * gsum;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("layer_norm: empty normalization axis");
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(c) + "], got " +
                     shape_str(gamma.shape()) + ", " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / c;
  std::vector<T> y(x.numel()), xhat(x.numel()), rstd(rows);
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * c + j] = h;
      y[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(y), {x, gamma, beta},
      [rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](const Impl<T>& out) {
        Impl<T>& X = input(out, 0);
        Impl<T>& G = input(out, 1);
        Impl<T>& B = input(out, 2);
        const T* g = out.grad.data();
        if (G.requires_grad) {
          auto& gg = G.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
        }
        if (B.requires_grad) {
          auto& gb = B.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
        if (X.requires_grad) {
          auto& gx = X.grad_buffer();
          const T inv_c = T(1) / static_cast<T>(c);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dh = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * G.data[j];
              mean_d += d;
              mean_dh += d * xhat[r * c + j];
            }
            mean_d *= inv_c;
            mean_dh *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * G.data[j];
              gx[r * c + j] += rstd[r] * (d - mean_d - xhat[r * c + j] * mean_dh);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, RngState& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  std::vector<T> mask(x.numel());
  for (T& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * mask[i];
  return make_result<T>("dropout", x.shape(), std::move(y), {x}, [mask = std::move(mask)](const Impl<T>& out) {
    auto& gx = input(out, 0).grad_buffer();
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += out.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                 std::size_t padding) {
  require_rank(x.shape(), 3, "conv2d");
  require_rank(w.shape(), 4, "conv2d");
  const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::size_t k = w.dim(0), cout = w.dim(3);
  if (w.dim(1) != k || w.dim(2) != cin || b.shape() != Shape{cout}) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                     shape_str(w.shape()) + " / bias " + shape_str(b.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  if (h + 2 * padding < k || wd + 2 * padding < k) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - k) / stride + 1;
  std::vector<T> y(ho * wo * cout);
  const T* X = x.data().data();
  const T* W = w.data().data();
  const T* B = b.data().data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      T* o = y.data() + (oy * wo + ox) * cout;
      std::copy(B, B + cout, o);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
          const T* xp = X + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
          const T* wk = W + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T xv = xp[ci];
            const T* wrow = wk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += xv * wrow[co];
          }
        }
      }
    }
  }
  return make_result<T>(
      "conv2d", {ho, wo, cout}, std::move(y), {x, w, b},
      [h, wd, cin, k, cout, ho, wo, stride, padding](const Impl<T>& out) {
        Impl<T>& Xi = input(out, 0);
        Impl<T>& Wi = input(out, 1);
        Impl<T>& Bi = input(out, 2);
        T* gx = Xi.requires_grad ? Xi.grad_buffer().data() : nullptr;
        T* gw = Wi.requires_grad ? Wi.grad_buffer().data() : nullptr;
        T* gb = Bi.requires_grad ? Bi.grad_buffer().data() : nullptr;
        const T* X = Xi.data.data();
        const T* W = Wi.data.data();
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const T* g = out.grad.data() + (oy * wo + ox) * cout;
            if (gb)
              for (std::size_t co = 0; co < cout; ++co) gb[co] += g[co];
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                const std::size_t xoff = (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
                const std::size_t woff = (ky * k + kx) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const T* wrow = W + woff + ci * cout;
                  if (gx) {
                    T acc = 0;
                    for (std::size_t co = 0; co < cout; ++co) acc += g[co] * wrow[co];
                    gx[xoff + ci] += acc;
                  }
                  if (gw) {
                    const T xv = X[xoff + ci];
                    T* gwrow = gw + woff + ci * cout;
                    for (std::size_t co = 0; co < cout; ++co) gwrow[co] += xv * g[co];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  require_rank(x.shape(), 3, "max_pool2d");
  if (kernel == 0 || stride == 0) throw ConfigError("max_pool2d: kernel and stride must be >= 1");
  const std::size_t h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  if (h < kernel || wd < kernel) throw ShapeError("max_pool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t ho = (h - kernel) / stride + 1;
  const std::size_t wo = (wd - kernel) / stride + 1;
  std::vector<T> y(ho * wo * c);
  std::vector<std::size_t> argmax(y.size());
  const auto xv = x.data();
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((oy * stride) * wd + ox * stride) * c + ch;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = ((oy * stride + ky) * wd + ox * stride + kx) * c + ch;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (oy * wo + ox) * c + ch;
        y[o] = xv[best];
        argmax[o] = best;
      }
  return make_result<T>("max_pool2d", {ho, wo, c}, std::move(y), {x}, [argmax = std::move(argmax)](const Impl<T>& out) {
    auto& gx = input(out, 0).grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += out.grad[o];
  });
}

template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        std::size_t heads, const AttentionParams<T>& params) {
  require_rank(q.shape(), 2, "multi_head_attention");
  require_rank(k.shape(), 2, "multi_head_attention");
  require_rank(v.shape(), 2, "multi_head_attention");
  const std::size_t c = q.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(c) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (k.dim(1) != c || v.dim(1) != c || k.dim(0) != v.dim(0)) {
    throw ShapeError("multi_head_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()));
  }
  const std::size_t lq = q.dim(0), lk = k.dim(0), dh = c / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));

  const Tensor<T> qp = linear(q, params.wq, params.bq);
  const Tensor<T> kp = linear(k, params.wk, params.bk);
  const Tensor<T> vp = linear(v, params.wv, params.bv);

  std::vector<Tensor<T>> head_out;
  std::vector<T> attn_values;
  attn_values.reserve(heads * lq * lk);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Tensor<T> qh = slice(qp, 1, hd * dh, dh);
    const Tensor<T> kh = slice(kp, 1, hd * dh, dh);
    const Tensor<T> vh = slice(vp, 1, hd * dh, dh);
    const Tensor<T> weights = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
    attn_values.insert(attn_values.end(), weights.data().begin(), weights.data().end());
    head_out.push_back(matmul(weights, vh));
  }
  const Tensor<T> merged = heads == 1 ? head_out.front() : concat(head_out, 1);
  return {linear(merged, params.wo, params.bo), Tensor<T>({heads, lq, lk}, std::move(attn_values))};
}

#define MST_INSTANTIATE(T)                                                                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                          \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                               \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                               \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                                              \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                         \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                                  \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                      \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                               \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                              \
  template Tensor<T> l2_norm<T>(const Tensor<T>&);                                                           \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                              \
  template Tensor<T> log_softmax<T>(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                 \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, RngState&, bool);                                  \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, std::size_t, std::size_t);                              \
  template AttentionResult<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                                      std::size_t, const AttentionParams<T>&);
MST_INSTANTIATE(float)
MST_INSTANTIATE(double)
#undef MST_INSTANTIATE

}  // namespace mst
