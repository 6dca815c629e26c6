#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "stsc/error.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

template <typename T>
struct AdamState {
  std::map<std::string, Tensor4<T>> m;
  std::map<std::string, Tensor4<T>> v;
  std::uint64_t t = 0;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every entry in `params`. Every
/// parameter needs a same-shaped gradient.
template <typename T>
void adam_step(std::map<std::string, Tensor4<T>>& params, const std::map<std::string, Tensor4<T>>& grads,
               AdamState<T>& state, double lr) {
  for (const auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ShapeError("adam_step: no gradient for " + name);
    if (g->second.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient shape " + g->second.shape().str() + " does not match parameter " + name +
                       " " + p.shape().str());
    }
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.b2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const Tensor4<T>& g = grads.at(name);
    auto [mit, mnew] = state.m.try_emplace(name, p.shape());
    auto [vit, vnew] = state.v.try_emplace(name, p.shape());
    Tensor4<T>& m = mit->second;
    Tensor4<T>& v = vit->second;
    if (m.shape() != p.shape() || v.shape() != p.shape()) throw ShapeError("adam_step: moment shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = state.b1 * static_cast<double>(m[i]) + (1.0 - state.b1) * gi;
      const double vi = state.b2 * static_cast<double>(v[i]) + (1.0 - state.b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace stsc
