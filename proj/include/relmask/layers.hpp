#pragma once

#include <cmath>
#include <string>

#include "relmask/autodiff.hpp"
#include "relmask/parameters.hpp"
#include "relmask/random.hpp"

namespace relmask {

template <typename Scalar>
Tensor<Scalar> uniform_tensor(const Shape& shape, double bound, Rng& rng) {
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  return t;
}

template <typename Scalar>
Tensor<Scalar> normal_tensor(const Shape& shape, double stddev, Rng& rng) {
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(stddev * normal01(rng));
  return t;
}

struct LinearSlots {
  int w = -1, b = -1;
};

struct Conv2dSlots {
  int w = -1, b = -1;
};

struct LayerNormSlots {
  int gamma = -1, beta = -1;
};

/// Weight [in, out], bias [out], both U(-1/sqrt(in), 1/sqrt(in)).
template <typename Scalar>
LinearSlots add_linear(ParameterSet<Scalar>& ps, const std::string& name, Index in, Index out,
                       Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearSlots s;
  s.w = ps.add(name + ".w", uniform_tensor<Scalar>({in, out}, bound, rng));
  s.b = ps.add(name + ".b", uniform_tensor<Scalar>({out}, bound, rng));
  return s;
}

/// Weight [out, in, k, k], bias [out], both U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
Conv2dSlots add_conv(ParameterSet<Scalar>& ps, const std::string& name, Index in, Index out,
                     Index k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  Conv2dSlots s;
  s.w = ps.add(name + ".w", uniform_tensor<Scalar>({out, in, k, k}, bound, rng));
  s.b = ps.add(name + ".b", uniform_tensor<Scalar>({out}, bound, rng));
  return s;
}

template <typename Scalar>
LayerNormSlots add_layernorm(ParameterSet<Scalar>& ps, const std::string& name, Index dim) {
  LayerNormSlots s;
  s.gamma = ps.add(name + ".gamma", Tensor<Scalar>({dim}, Scalar(1)));
  s.beta = ps.add(name + ".beta", Tensor<Scalar>({dim}, Scalar(0)));
  return s;
}

template <typename Scalar>
Var<Scalar> apply(ParameterBinding<Scalar>& p, const LinearSlots& s, const Var<Scalar>& x) {
  return linear(x, p[s.w], p[s.b]);
}

template <typename Scalar>
Var<Scalar> apply(ParameterBinding<Scalar>& p, const Conv2dSlots& s, const Var<Scalar>& x,
                  int stride, int pad) {
  return conv2d(x, p[s.w], p[s.b], stride, pad);
}

template <typename Scalar>
Var<Scalar> apply(ParameterBinding<Scalar>& p, const LayerNormSlots& s, const Var<Scalar>& x) {
  return layernorm(x, p[s.gamma], p[s.beta]);
}

}  // namespace relmask
