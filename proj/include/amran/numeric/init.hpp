#pragma once

#include <cmath>
#include <cstdint>

#include "amran/numeric/tensor.hpp"
#include "amran/random.hpp"

namespace amran::numeric {

struct FanInOut {
  double fan_in;
  double fan_out;
};

// 2-D weights are stored (in x out); 4-D conv kernels (out, in, kh, kw).
inline FanInOut fans(const Shape& shape) {
  if (shape.empty()) throw ShapeError("xavier_init: empty shape");
  for (auto d : shape)
    if (d == 0) throw ShapeError("xavier_init: zero dimension in " + shape_str(shape));
  if (shape.size() == 1) return {static_cast<double>(shape[0]), static_cast<double>(shape[0])};
  if (shape.size() == 2) return {static_cast<double>(shape[0]), static_cast<double>(shape[1])};
  double receptive = 1.0;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= static_cast<double>(shape[i]);
  return {static_cast<double>(shape[1]) * receptive, static_cast<double>(shape[0]) * receptive};
}

inline double xavier_bound(const Shape& shape) {
  const auto f = fans(shape);
  return std::sqrt(6.0 / (f.fan_in + f.fan_out));
}

// Uniform Glorot initialization, trainable.
inline Tensor xavier_init(const Shape& shape, std::uint64_t seed) {
  const double bound = xavier_bound(shape);
  Rng rng(seed);
  Tensor t(shape, 0.0, true);
  for (double& v : t.values()) v = (2.0 * uniform_open01(rng) - 1.0) * bound;
  return t;
}

inline Tensor zeros_param(const Shape& shape) { return Tensor(shape, 0.0, true); }
inline Tensor constant_param(const Shape& shape, double v) { return Tensor(shape, v, true); }

// Identity-initialized 1x1 channel-mixing kernel (c, c, 1, 1).
inline Tensor identity_kernel(std::size_t c) {
  Tensor t({c, c, 1, 1}, 0.0, true);
  for (std::size_t i = 0; i < c; ++i) t.values()[i * c + i] = 1.0;
  return t;
}

}  // namespace amran::numeric
