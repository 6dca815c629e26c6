#pragma once

// Byte-level stylization shared by the CLI and the HTTP service, so both
// produce identical PNG output for identical (model, image, alpha).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stsc/image.hpp"
#include "stsc/trainer.hpp"
#include "stsc/transformer.hpp"

namespace stsc {

/// Precision used for inference by the CLI and the service.
using InferenceScalar = float;

/// Parses a finite real; the whole string must be consumed.
inline std::optional<double> parse_alpha(std::string_view text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// Shortest round-trip representation.
inline std::string format_alpha(double alpha) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, alpha);
  return std::string(buf, ptr);
}

inline bool alpha_extrapolated(double alpha) { return alpha < 0.0 || alpha > kAlphaMax; }

struct StylizedImage {
  std::vector<std::uint8_t> png;
  std::size_t size = 0;  // side length the input was resized/cropped to
};

/// decode -> resize/crop to the model's training size -> forward -> PNG.
template <typename T>
StylizedImage stylize_image_bytes(const ModelFile<T>& model, std::span<const std::uint8_t> image_bytes, double alpha) {
  const Tensor4<T> x = resize_and_crop(decode_image<T>(image_bytes), model.meta.image_size);
  return {encode_png(stylize(model.weights, x, alpha)), model.meta.image_size};
}

}  // namespace stsc
