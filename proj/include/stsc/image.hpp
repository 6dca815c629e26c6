#pragma once

// Image I/O: PNG (libpng simplified API) and binary PPM (P6), to and from
// (1, 3, h, w) tensors with values in [0, 1], RGB channel order.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "stsc/error.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

namespace detail {

inline bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

template <typename T>
Tensor4<T> from_interleaved(const std::uint8_t* rgb, std::size_t w, std::size_t h, int bytes_per_sample, double maxval) {
  Tensor4<T> t(Shape{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t i = ((y * w + x) * 3 + c) * static_cast<std::size_t>(bytes_per_sample);
        const unsigned v = bytes_per_sample == 1 ? rgb[i] : (static_cast<unsigned>(rgb[i]) << 8) | rgb[i + 1];
        t.at(0, c, y, x) = static_cast<T>(static_cast<double>(v) / maxval);
      }
  return t;
}

template <typename T>
Tensor4<T> decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ImageError(std::string("corrupt PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ImageError("corrupt PNG: " + msg);
  }
  return from_interleaved<T>(buf.data(), image.width, image.height, 1, 255.0);
}

template <typename T>
Tensor4<T> decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ImageError("corrupt PPM header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) throw ImageError("corrupt PPM header: value too large");
    }
    return v;
  };
  const std::size_t w = number();
  const std::size_t h = number();
  const std::size_t maxval = number();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw ImageError("corrupt PPM header");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ImageError("corrupt PPM header");
  ++pos;
  const int bps = maxval < 256 ? 1 : 2;
  if (bytes.size() - pos < w * h * 3 * static_cast<std::size_t>(bps)) throw ImageError("corrupt PPM: truncated pixel data");
  return from_interleaved<T>(bytes.data() + pos, w, h, bps, static_cast<double>(maxval));
}

}  // namespace detail

/// Decodes PNG or binary PPM (P6) bytes into a (1, 3, h, w) tensor in [0, 1].
template <typename T>
Tensor4<T> decode_image(std::span<const std::uint8_t> bytes) {
  if (detail::is_png(bytes)) return detail::decode_png<T>(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return detail::decode_ppm<T>(bytes);
  throw ImageError("unsupported image format (expected PNG or binary PPM)");
}

template <typename T>
Tensor4<T> load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot read image " + path.string());
  std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  try {
    return decode_image<T>(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

/// 8-bit quantization used by every writer: round(clamp(v, 0, 1) * 255).
template <typename T>
std::vector<std::uint8_t> to_rgb8(const Tensor4<T>& img) {
  const Shape s = img.shape();
  if (s.n != 1 || s.c != 3) throw ImageError("image tensor must be (1, 3, h, w), got " + s.str());
  std::vector<std::uint8_t> rgb(s.h * s.w * 3);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img.at(0, c, y, x)), 0.0, 1.0);
        rgb[(y * s.w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return rgb;
}

template <typename T>
std::vector<std::uint8_t> encode_png(const Tensor4<T>& img) {
  const std::vector<std::uint8_t> rgb = to_rgb8(img);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.shape().w);
  image.height = static_cast<png_uint_32>(img.shape().h);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw ImageError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw ImageError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

template <typename T>
std::vector<std::uint8_t> encode_ppm(const Tensor4<T>& img) {
  const std::vector<std::uint8_t> rgb = to_rgb8(img);
  const std::string header = "P6\n" + std::to_string(img.shape().w) + " " + std::to_string(img.shape().h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("write failed: " + path.string());
}

/// Writes an 8-bit PNG (values clamped to [0, 1]).
template <typename T>
void save_image(const Tensor4<T>& img, const std::filesystem::path& path) {
  write_bytes(path, encode_png(img));
}

/// Bilinear resampling with half-pixel centers (identity when sizes match).
template <typename T>
Tensor4<T> resize_bilinear(const Tensor4<T>& img, std::size_t out_h, std::size_t out_w) {
  const Shape s = img.shape();
  if (out_h == 0 || out_w == 0) throw ImageError("resize to empty image");
  if (s.h == out_h && s.w == out_w) return img;
  Tensor4<T> out(Shape{s.n, s.c, out_h, out_w});
  auto src_coord = [](std::size_t dst, std::size_t in, std::size_t outn) {
    const double v = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(v, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = src_coord(y, s.h, out_h);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, s.h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = src_coord(x, s.w, out_w);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, s.w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
          const double top = (1 - fx) * img.at(n, c, y0, x0) + fx * img.at(n, c, y0, x1);
          const double bot = (1 - fx) * img.at(n, c, y1, x0) + fx * img.at(n, c, y1, x1);
          out.at(n, c, y, x) = static_cast<T>((1 - fy) * top + fy * bot);
        }
    }
  }
  return out;
}

/// Resizes so the short side equals `size`, then center-crops to size x size.
template <typename T>
Tensor4<T> resize_and_crop(const Tensor4<T>& img, std::size_t size) {
  const Shape s = img.shape();
  if (s.h == 0 || s.w == 0) throw ImageError("empty image");
  std::size_t h = size;
  std::size_t w = size;
  if (s.h < s.w) {
    w = static_cast<std::size_t>(std::lround(static_cast<double>(s.w) * static_cast<double>(size) / static_cast<double>(s.h)));
  } else if (s.w < s.h) {
    h = static_cast<std::size_t>(std::lround(static_cast<double>(s.h) * static_cast<double>(size) / static_cast<double>(s.w)));
  }
  const Tensor4<T> r = resize_bilinear(img, std::max(h, size), std::max(w, size));
  const std::size_t oy = (r.shape().h - size) / 2;
  const std::size_t ox = (r.shape().w - size) / 2;
  Tensor4<T> out(Shape{s.n, s.c, size, size});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) out.at(n, c, y, x) = r.at(n, c, y + oy, x + ox);
  return out;
}

/// Concatenates single-image tensors along the batch axis.
template <typename T>
Tensor4<T> stack_batch(std::span<const Tensor4<T>> images) {
  if (images.empty()) throw ShapeError("stack_batch: no images");
  const Shape s = images.front().shape();
  Tensor4<T> out(Shape{images.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw ShapeError("stack_batch: image " + std::to_string(i) + " has shape " + images[i].shape().str());
    std::copy(images[i].data().begin(), images[i].data().end(), out.data().begin() + i * s.size());
  }
  return out;
}

}  // namespace stsc
