#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "amran/numeric/tensor.hpp"

// Differentiable primitives. Matrices are row-major (rows x cols); image-like
// tensors use (batch, channels, height, width).
namespace amran::numeric {

namespace detail {

inline double* grad_of(Node& self, std::size_t k) {
  Node& p = *self.parents[k];
  return p.requires_grad ? p.grad.data() : nullptr;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = detail::grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return make_result(a.shape(), std::move(out), {a}, [c](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += c * self.grad[i];
  });
}

// s is a one-element tensor broadcast over a.
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: scalar operand has " + std::to_string(s.size()) + " elements");
  const double sv = s[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sv;
  return make_result(a.shape(), std::move(out), {a, s}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const double sv = self.parents[1]->value[0];
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sv * self.grad[i];
    if (double* g = detail::grad_of(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += av[i] * self.grad[i];
      g[0] += acc;
    }
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  auto& monitor = KinkMonitor::instance();
  if (monitor.enabled()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      word = (word << 1) | (a[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63) monitor.record(word), word = 0;
    }
    monitor.record(word);
  }
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (av[i] > 0.0) g[i] += self.grad[i];
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(a[i]);
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        g[i] += self.grad[i] * y * (1.0 - y);
      }
  });
}

// 1 - a
inline Tensor one_minus(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - a[i];
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

inline Tensor sum_squares(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += 2.0 * av[i] * self.grad[0];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_result(std::move(shape), a.values(), {a}, [](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(n * m, 0.0);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = bv + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += x * brow[j];
    }
  return make_result({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    const double* gv = self.grad.data();
    if (double* ga = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += gv[i * m + j] * bv[p * m + j];
          ga[i * k + p] += acc;
        }
    if (double* gb = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = av[i * k + p];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += x * gv[i * m + j];
        }
  });
}

// x (R x C) + bias (C) broadcast over rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_row_bias");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (bias.size() != c) throw ShapeError("add_row_bias: bias length mismatch");
  std::vector<double> out(x.values());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
  return make_result(x.shape(), std::move(out), {x, bias}, [r, c](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < r * c; ++i) g[i] += self.grad[i];
    if (double* g = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
  });
}

inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Indexing and concatenation
// ---------------------------------------------------------------------------

// Rows of `table` selected by index; index -1 yields a zero row.
inline Tensor gather_rows(const Tensor& table, std::vector<std::int64_t> index) {
  detail::require_rank(table, 2, "gather_rows");
  const std::size_t v = table.dim(0), c = table.dim(1);
  std::vector<double> out(index.size() * c, 0.0);
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto id = index[r];
    if (id < 0) continue;
    if (static_cast<std::size_t>(id) >= v)
      throw ShapeError("gather_rows: index " + std::to_string(id) + " out of range " + std::to_string(v));
    std::copy_n(table.data().data() + id * c, c, out.data() + r * c);
  }
  const std::size_t rows = index.size();
  return make_result({rows, c}, std::move(out), {table},
                     [index = std::move(index), c](Node& self) {
                       if (double* g = detail::grad_of(self, 0))
                         for (std::size_t r = 0; r < index.size(); ++r) {
                           if (index[r] < 0) continue;
                           double* dst = g + index[r] * c;
                           const double* src = self.grad.data() + r * c;
                           for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                         }
                     });
}

// Stacks per-attribute lookups into an image batch. `index` has one row per
// (item, channel) pair and one column per table; -1 entries produce zeros.
// Output shape is (items, channels, tables.size(), width).
inline Tensor gather_stack(const std::vector<Tensor>& tables, const std::vector<std::int64_t>& index,
                           std::size_t items, std::size_t channels) {
  const std::size_t rows = tables.size();
  if (rows == 0) throw ShapeError("gather_stack: no tables");
  const std::size_t width = tables[0].dim(1);
  for (const auto& t : tables)
    if (t.rank() != 2 || t.dim(1) != width) throw ShapeError("gather_stack: table widths differ");
  if (index.size() != items * channels * rows) throw ShapeError("gather_stack: index size mismatch");
  std::vector<double> out(items * channels * rows * width, 0.0);
  for (std::size_t e = 0; e < items * channels; ++e)
    for (std::size_t a = 0; a < rows; ++a) {
      const auto id = index[e * rows + a];
      if (id < 0) continue;
      if (static_cast<std::size_t>(id) >= tables[a].dim(0))
        throw ShapeError("gather_stack: index " + std::to_string(id) + " out of range for table " +
                         std::to_string(a));
      std::copy_n(tables[a].data().data() + id * width, width, out.data() + (e * rows + a) * width);
    }
  return make_result({items, channels, rows, width}, std::move(out), tables,
                     [index, rows, width](Node& self) {
                       const std::size_t entries = index.size() / rows;
                       for (std::size_t a = 0; a < rows; ++a) {
                         double* g = detail::grad_of(self, a);
                         if (!g) continue;
                         for (std::size_t e = 0; e < entries; ++e) {
                           const auto id = index[e * rows + a];
                           if (id < 0) continue;
                           const double* src = self.grad.data() + (e * rows + a) * width;
                           double* dst = g + id * width;
                           for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != r) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(parts[k].data().data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  return make_result({r, total}, std::move(out), parts, [r, total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* g = detail::grad_of(self, k))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + offset + j];
      offset += widths[k];
    }
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t c = parts[0].dim(1);
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) throw ShapeError("concat_rows: column count mismatch");
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.size());
    rows += p.dim(0);
  }
  return make_result({rows, c}, std::move(out), parts, [sizes](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (double* g = detail::grad_of(self, k))
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[offset + i];
      offset += sizes[k];
    }
  });
}

// ---------------------------------------------------------------------------
// Image-like primitives (N, C, H, W)
// ---------------------------------------------------------------------------

// Stride-1 convolution with zero padding that preserves H and W (odd kernels).
// `bias` may be an undefined tensor.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(weight, 4, "conv2d");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != ci || weight.dim(3) != k || k % 2 == 0)
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != co) throw ShapeError("conv2d: bias length mismatch");
  const long pad = static_cast<long>(k / 2);
  std::vector<double> out(n * co * h * w, 0.0);
  const double* xv = x.data().data();
  const double* wv = weight.data().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o) {
      double* dst = out.data() + ((b * co + o) * h) * w;
      if (has_bias)
        for (std::size_t i = 0; i < h * w; ++i) dst[i] = bias[o];
      for (std::size_t c = 0; c < ci; ++c) {
        const double* src = xv + ((b * ci + c) * h) * w;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wt = wv[((o * ci + c) * k + ky) * k + kx];
            if (wt == 0.0) continue;
            const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
            const long y0 = std::max(0L, -dy), y1 = std::min<long>(h, static_cast<long>(h) - dy);
            const long x0 = std::max(0L, -dx), x1 = std::min<long>(w, static_cast<long>(w) - dx);
            for (long yy = y0; yy < y1; ++yy) {
              const double* srow = src + (yy + dy) * static_cast<long>(w) + dx;
              double* drow = dst + yy * static_cast<long>(w);
              for (long xx = x0; xx < x1; ++xx) drow[xx] += wt * srow[xx];
            }
          }
      }
    }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({n, co, h, w}, std::move(out), inputs,
                     [n, ci, h, w, co, k, pad, has_bias](Node& self) {
                       const double* xv = self.parents[0]->value.data();
                       const double* wv = self.parents[1]->value.data();
                       const double* gv = self.grad.data();
                       double* gx = detail::grad_of(self, 0);
                       double* gw = detail::grad_of(self, 1);
                       if (has_bias)
                         if (double* gb = detail::grad_of(self, 2))
                           for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t o = 0; o < co; ++o) {
                               const double* src = gv + ((b * co + o) * h) * w;
                               double acc = 0.0;
                               for (std::size_t i = 0; i < h * w; ++i) acc += src[i];
                               gb[o] += acc;
                             }
                       if (!gx && !gw) return;
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t o = 0; o < co; ++o) {
                           const double* grow = gv + ((b * co + o) * h) * w;
                           for (std::size_t c = 0; c < ci; ++c) {
                             const std::size_t xoff = ((b * ci + c) * h) * w;
                             for (std::size_t ky = 0; ky < k; ++ky)
                               for (std::size_t kx = 0; kx < k; ++kx) {
                                 const std::size_t widx = ((o * ci + c) * k + ky) * k + kx;
                                 const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
                                 const long y0 = std::max(0L, -dy), y1 = std::min<long>(h, static_cast<long>(h) - dy);
                                 const long x0 = std::max(0L, -dx), x1 = std::min<long>(w, static_cast<long>(w) - dx);
                                 double wacc = 0.0;
                                 const double wt = wv[widx];
                                 for (long yy = y0; yy < y1; ++yy) {
                                   const std::size_t srow = xoff + (yy + dy) * w + dx;
                                   const double* g = grow + yy * static_cast<long>(w);
                                   for (long xx = x0; xx < x1; ++xx) {
                                     wacc += g[xx] * xv[srow + xx];
                                     if (gx) gx[srow + xx] += wt * g[xx];
                                   }
                                 }
                                 if (gw) gw[widx] += wacc;
                               }
                           }
                         }
                     });
}

// Mean over channels: (N, C, H, W) -> (N, 1, H, W).
inline Tensor channel_mean(const Tensor& x) {
  detail::require_rank(x, 4, "channel_mean");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * hw, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) out[b * hw + i] += x[(b * c + ch) * hw + i];
  for (double& v : out) v /= static_cast<double>(c);
  return make_result({n, 1, x.dim(2), x.dim(3)}, std::move(out), {x}, [n, c, hw](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < hw; ++i)
            g[(b * c + ch) * hw + i] += self.grad[b * hw + i] / static_cast<double>(c);
  });
}

// Mean over (H, W): (N, C, H, W) -> (N, C).
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t e = 0; e < n * c; ++e) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[e * hw + i];
    out[e] = acc / static_cast<double>(hw);
  }
  return make_result({n, c}, std::move(out), {x}, [n, c, hw](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t e = 0; e < n * c; ++e)
        for (std::size_t i = 0; i < hw; ++i) g[e * hw + i] += self.grad[e] / static_cast<double>(hw);
  });
}

// Max over (H, W): (N, C, H, W) -> (N, C). Gradient goes to the first argmax.
inline Tensor global_max_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_max_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * c);
  std::vector<std::size_t> arg(n * c);
  auto& monitor = KinkMonitor::instance();
  for (std::size_t e = 0; e < n * c; ++e) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i)
      if (x[e * hw + i] > x[e * hw + best]) best = i;
    arg[e] = best;
    out[e] = x[e * hw + best];
    if (monitor.enabled()) monitor.record(best);
  }
  return make_result({n, c}, std::move(out), {x}, [arg = std::move(arg), hw](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t e = 0; e < arg.size(); ++e) g[e * hw + arg[e]] += self.grad[e];
  });
}

// Running statistics for one batch-norm layer; owned by the model.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  explicit BatchNormStats(std::size_t channels = 1) : mean(channels, 0.0), var(channels, 1.0) {}
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
  bool update_running = true;
};

// Per-channel normalization over (N, H, W) followed by gamma/beta.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                         const BatchNormOptions& opt = {}) {
  detail::require_rank(x, 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c || stats.mean.size() != c)
    throw ShapeError("batch_norm: parameter length mismatch");
  const std::size_t count = n * hw;
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (opt.training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) m += x[(b * c + ch) * hw + i];
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = x[(b * c + ch) * hw + i] - m;
          v += d * d;
        }
      const double biased = v / static_cast<double>(count);
      mean[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(biased + opt.eps);
      if (opt.update_running) {
        const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : biased;
        stats.mean[ch] = (1.0 - opt.momentum) * stats.mean[ch] + opt.momentum * m;
        stats.var[ch] = (1.0 - opt.momentum) * stats.var[ch] + opt.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + opt.eps);
    }
  }
  std::vector<double> normalized(x.size()), out(x.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * c + ch) * hw + i;
        normalized[idx] = (x[idx] - mean[ch]) * inv_std[ch];
        out[idx] = gamma[ch] * normalized[idx] + beta[ch];
      }
  const bool training = opt.training;
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [n, c, hw, count, training, inv_std = std::move(inv_std),
                      normalized = std::move(normalized)](Node& self) {
                       const auto& gam = self.parents[1]->value;
                       double* gx = detail::grad_of(self, 0);
                       double* gg = detail::grad_of(self, 1);
                       double* gb = detail::grad_of(self, 2);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t idx = (b * c + ch) * hw + i;
                             sum_g += self.grad[idx];
                             sum_gx += self.grad[idx] * normalized[idx];
                           }
                         if (gg) gg[ch] += sum_gx;
                         if (gb) gb[ch] += sum_g;
                         if (!gx) continue;
                         const double cnt = static_cast<double>(count);
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t idx = (b * c + ch) * hw + i;
                             if (training)
                               gx[idx] += gam[ch] * inv_std[ch] / cnt *
                                          (cnt * self.grad[idx] - sum_g - normalized[idx] * sum_gx);
                             else
                               gx[idx] += gam[ch] * inv_std[ch] * self.grad[idx];
                           }
                       }
                     });
}

// Broadcast product of a single-channel map (N, 1, H, W) with per-channel
// weights (N, C): out[n, c, h, w] = layer[n, 0, h, w] * channel[n, c].
inline Tensor layer_channel_product(const Tensor& layer, const Tensor& channel) {
  detail::require_rank(layer, 4, "layer_channel_product");
  detail::require_rank(channel, 2, "layer_channel_product");
  const std::size_t n = layer.dim(0), h = layer.dim(2), w = layer.dim(3), c = channel.dim(1);
  if (layer.dim(1) != 1 || channel.dim(0) != n) throw ShapeError("layer_channel_product: shape mismatch");
  const std::size_t hw = h * w;
  std::vector<double> out(n * c * hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) out[(b * c + ch) * hw + i] = layer[b * hw + i] * channel[b * c + ch];
  return make_result({n, c, h, w}, std::move(out), {layer, channel}, [n, c, hw](Node& self) {
    const auto& lv = self.parents[0]->value;
    const auto& cv = self.parents[1]->value;
    double* gl = detail::grad_of(self, 0);
    double* gc = detail::grad_of(self, 1);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          const double g = self.grad[(b * c + ch) * hw + i];
          acc += g * lv[b * hw + i];
          if (gl) gl[b * hw + i] += g * cv[b * c + ch];
        }
        if (gc) gc[b * c + ch] += acc;
      }
  });
}

// Zeroes channels whose `padded` flag is set; flags are (N x C).
inline Tensor mask_channels(const Tensor& x, const std::vector<std::uint8_t>& padded) {
  detail::require_rank(x, 4, "mask_channels");
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  if (padded.size() != nc) throw ShapeError("mask_channels: mask size mismatch");
  std::vector<double> out(x.values());
  for (std::size_t e = 0; e < nc; ++e)
    if (padded[e]) std::fill_n(out.begin() + e * hw, hw, 0.0);
  return make_result(x.shape(), std::move(out), {x}, [padded, hw](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t e = 0; e < padded.size(); ++e)
        if (!padded[e])
          for (std::size_t i = 0; i < hw; ++i) g[e * hw + i] += self.grad[e * hw + i];
  });
}

// ---------------------------------------------------------------------------
// Attention helpers
// ---------------------------------------------------------------------------

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(x[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [r, c](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
      }
  });
}

// Softmax over consecutive groups of `group` columns, restricted to entries
// whose `valid` flag is set. A group without valid entries yields all zeros.
inline Tensor masked_group_softmax(const Tensor& x, const std::vector<std::uint8_t>& valid, std::size_t group) {
  detail::require_rank(x, 2, "masked_group_softmax");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (group == 0 || c % group != 0) throw ShapeError("masked_group_softmax: bad group size");
  if (valid.size() != r * c) throw ShapeError("masked_group_softmax: mask size mismatch");
  std::vector<double> out(r * c, 0.0);
  for (std::size_t start = 0; start < r * c; start += group) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = start; j < start + group; ++j)
      if (valid[j]) mx = std::max(mx, x[j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = start; j < start + group; ++j)
      if (valid[j]) z += (out[j] = std::exp(x[j] - mx));
    for (std::size_t j = start; j < start + group; ++j) out[j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [r, c, group](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t start = 0; start < r * c; start += group) {
        double dot = 0.0;
        for (std::size_t j = start; j < start + group; ++j) dot += self.grad[j] * self.value[j];
        for (std::size_t j = start; j < start + group; ++j) g[j] += self.value[j] * (self.grad[j] - dot);
      }
  });
}

// Cosine similarity of central row r with each of its k neighbor rows
// (neighbors stored as rows r*k .. r*k+k-1). Zero-norm operands give 0.
inline Tensor cosine_pairs(const Tensor& central, const Tensor& neighbors, std::size_t k) {
  detail::require_rank(central, 2, "cosine_pairs");
  detail::require_rank(neighbors, 2, "cosine_pairs");
  const std::size_t r = central.dim(0), d = central.dim(1);
  if (neighbors.dim(0) != r * k || neighbors.dim(1) != d) throw ShapeError("cosine_pairs: shape mismatch");
  std::vector<double> out(r * k, 0.0), cn(r), nn(r * k);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += central[i * d + t] * central[i * d + t];
    cn[i] = std::sqrt(s);
  }
  for (std::size_t e = 0; e < r * k; ++e) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += neighbors[e * d + t] * neighbors[e * d + t];
    nn[e] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t e = i * k + j;
      if (cn[i] == 0.0 || nn[e] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += central[i * d + t] * neighbors[e * d + t];
      out[e] = dot / (cn[i] * nn[e]);
    }
  return make_result({r, k}, std::move(out), {central, neighbors},
                     [r, k, d, cn = std::move(cn), nn = std::move(nn)](Node& self) {
                       const auto& cv = self.parents[0]->value;
                       const auto& nv = self.parents[1]->value;
                       double* gc = detail::grad_of(self, 0);
                       double* gn = detail::grad_of(self, 1);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < k; ++j) {
                           const std::size_t e = i * k + j;
                           if (cn[i] == 0.0 || nn[e] == 0.0) continue;
                           const double g = self.grad[e], cosv = self.value[e];
                           const double inv = 1.0 / (cn[i] * nn[e]);
                           for (std::size_t t = 0; t < d; ++t) {
                             const double a = cv[i * d + t], b = nv[e * d + t];
                             if (gc) gc[i * d + t] += g * (b * inv - cosv * a / (cn[i] * cn[i]));
                             if (gn) gn[e * d + t] += g * (a * inv - cosv * b / (nn[e] * nn[e]));
                           }
                         }
                     });
}

// Rows of x scaled by constant weights (one per row).
inline Tensor scale_rows(const Tensor& x, std::vector<double> weights) {
  detail::require_rank(x, 2, "scale_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (weights.size() != r) throw ShapeError("scale_rows: weight count mismatch");
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * weights[i];
  return make_result(x.shape(), std::move(out), {x}, [weights = std::move(weights), c](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < weights.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * weights[i];
  });
}

// out[r] = sum_j alpha[r, j] * z[r*k + j]; z is (R*k x D), alpha is (R x k).
inline Tensor weighted_group_sum(const Tensor& z, const Tensor& alpha) {
  detail::require_rank(z, 2, "weighted_group_sum");
  detail::require_rank(alpha, 2, "weighted_group_sum");
  const std::size_t r = alpha.dim(0), k = alpha.dim(1), d = z.dim(1);
  if (z.dim(0) != r * k) throw ShapeError("weighted_group_sum: shape mismatch");
  std::vector<double> out(r * d, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double a = alpha[i * k + j];
      if (a == 0.0) continue;
      for (std::size_t t = 0; t < d; ++t) out[i * d + t] += a * z[(i * k + j) * d + t];
    }
  return make_result({r, d}, std::move(out), {z, alpha}, [r, k, d](Node& self) {
    const auto& zv = self.parents[0]->value;
    const auto& av = self.parents[1]->value;
    double* gz = detail::grad_of(self, 0);
    double* ga = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
          const double g = self.grad[i * d + t];
          acc += g * zv[(i * k + j) * d + t];
          if (gz) gz[(i * k + j) * d + t] += g * av[i * k + j];
        }
        if (ga) ga[i * k + j] += acc;
      }
  });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityFloor = 1e-7;

// Summed binary cross-entropy over predicted probabilities. Predictions outside
// [1e-7, 1-1e-7] are clamped; `clamped` (if given) counts how many were.
inline Tensor bce_loss(const Tensor& probs, const std::vector<double>& labels, std::size_t* clamped = nullptr) {
  if (probs.size() != labels.size()) throw ShapeError("bce_loss: label count mismatch");
  double loss = 0.0;
  std::vector<double> p(probs.size());
  auto& monitor = KinkMonitor::instance();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double raw = probs[i];
    p[i] = std::clamp(raw, kProbabilityFloor, 1.0 - kProbabilityFloor);
    if (p[i] != raw && clamped) ++*clamped;
    if (monitor.enabled()) monitor.record(p[i] != raw);
    loss -= labels[i] * std::log(p[i]) + (1.0 - labels[i]) * std::log(1.0 - p[i]);
  }
  return make_result({1}, {loss}, {probs}, [labels, p = std::move(p)](Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < p.size(); ++i)
        g[i] += self.grad[0] * (-(labels[i] / p[i]) + (1.0 - labels[i]) / (1.0 - p[i]));
  });
}

}  // namespace amran::numeric
