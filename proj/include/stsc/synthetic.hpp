#pragma once

// Procedural images for demos and tests.

#include <cmath>
#include <numbers>

#include "stsc/rng.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

/// Smooth gradient background with one disc and one box of random colors.
template <typename T>
Tensor4<T> synthetic_content(std::size_t size, Xorshift64Star& rng) {
  Tensor4<T> img(Shape{1, 3, size, size});
  double base[3], tint[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.6 * rng.uniform();
    tint[c] = rng.uniform();
  }
  const double cx = size * (0.3 + 0.4 * rng.uniform()), cy = size * (0.3 + 0.4 * rng.uniform());
  const double radius = size * (0.15 + 0.2 * rng.uniform());
  const double bx = rng.uniform() * size, by = rng.uniform() * size, bw = size * (0.1 + 0.3 * rng.uniform());
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double gy = static_cast<double>(y) / size;
      const bool in_disc = std::hypot(x - cx, y - cy) < radius;
      const bool in_box = std::abs(x - bx) < bw && std::abs(y - by) < bw * 0.6;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c] * (0.6 + 0.4 * gy);
        if (in_disc) v = tint[c];
        if (in_box) v = 1.0 - tint[c];
        img.at(0, c, y, x) = static_cast<T>(v);
      }
    }
  return img;
}

/// Warped sinusoids and a checkerboard: strong, uniform texture statistics.
template <typename T>
Tensor4<T> synthetic_style(std::size_t size) {
  Tensor4<T> img(Shape{1, 3, size, size});
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = 2 * std::numbers::pi * x / 8.0, v = 2 * std::numbers::pi * y / 6.0;
      img.at(0, 0, y, x) = static_cast<T>(0.5 + 0.5 * std::sin(u + 0.7 * std::sin(v)));
      img.at(0, 1, y, x) = static_cast<T>(0.5 + 0.5 * std::sin(v + u * 0.5));
      img.at(0, 2, y, x) = static_cast<T>(((x / 4 + y / 4) % 2) ? 0.9 : 0.15);
    }
  return img;
}

}  // namespace stsc
