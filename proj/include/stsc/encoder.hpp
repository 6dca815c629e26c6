#pragma once

// Frozen perceptual encoder used by the content and style losses.
//
// Four stages, each conv3x3 (stride 1, mirror pad 1) -> relu -> 2x2 average
// pool, with widths 16, 32, 64, 128. Stage 3 is the content layer; all four
// stages are style layers. Weights are random (He-scaled Gaussian from a
// seeded xorshift64* stream) unless imported from a checkpoint.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stsc/checkpoint.hpp"
#include "stsc/ops.hpp"
#include "stsc/rng.hpp"
#include "stsc/tape.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

inline constexpr std::array<std::size_t, 4> kEncoderWidths = {16, 32, 64, 128};
inline constexpr std::size_t kContentStage = 3;  // 1-based

template <typename T>
struct EncoderStage {
  Tensor4<T> weight;  // (c_out, c_in, 3, 3)
  Tensor4<T> bias;    // (1, c_out, 1, 1)
};

template <typename T>
struct EncoderWeights {
  std::vector<EncoderStage<T>> stages;
  std::uint64_t seed = 0;
  bool frozen = true;

  friend bool operator==(const EncoderWeights& a, const EncoderWeights& b) {
    if (a.stages.size() != b.stages.size()) return false;
    for (std::size_t s = 0; s < a.stages.size(); ++s)
      if (!(a.stages[s].weight == b.stages[s].weight) || !(a.stages[s].bias == b.stages[s].bias)) return false;
    return true;
  }
};

/// Per-stage activations f1..f4 of one encode() call.
struct FeatureSet {
  std::array<Var, 4> stages;

  Var content() const { return stages[kContentStage - 1]; }
};

inline std::string encoder_weight_name(std::size_t stage) { return "enc.stage" + std::to_string(stage) + ".weight"; }
inline std::string encoder_bias_name(std::size_t stage) { return "enc.stage" + std::to_string(stage) + ".bias"; }

/// Draws He-scaled Gaussian weights, rounded to float32 so every generated
/// encoder round-trips losslessly through a checkpoint at any precision.
template <typename T>
EncoderWeights<T> generate_encoder(std::uint64_t seed) {
  Xorshift64Star rng(seed);
  EncoderWeights<T> enc;
  enc.seed = seed;
  std::size_t cin = 3;
  for (std::size_t cout : kEncoderWidths) {
    EncoderStage<T> st{Tensor4<T>(Shape{cout, cin, 3, 3}), Tensor4<T>(channel_vector_shape(cout))};
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * 9));
    for (auto& v : st.weight.data()) v = static_cast<T>(static_cast<float>(stddev * rng.gaussian()));
    enc.stages.push_back(std::move(st));
    cin = cout;
  }
  return enc;
}

/// Runs the encoder on image `x` (values in [0, 1], 3 channels, h and w
/// multiples of 16). Encoder weights enter the tape as constants, so
/// gradients reach `x` but never the encoder.
template <typename T>
FeatureSet encode(Tape<T>& tape, Var x, const EncoderWeights<T>& enc) {
  const Shape xs = tape.shape(x);
  if (xs.c != 3) throw ShapeError("encode: expected 3 input channels, got " + std::to_string(xs.c));
  if (xs.h == 0 || xs.w == 0 || xs.h % 16 != 0 || xs.w % 16 != 0) {
    throw ShapeError("encode: spatial dims must be positive multiples of 16, got " + xs.str());
  }
  if (enc.stages.size() != kEncoderWidths.size()) throw ShapeError("encode: encoder must have 4 stages");
  FeatureSet fs;
  Var h = x;
  for (std::size_t s = 0; s < enc.stages.size(); ++s) {
    const Var w = tape.constant(enc.stages[s].weight);
    const Var b = tape.constant(enc.stages[s].bias);
    h = avg_pool2(tape, relu(tape, conv2d(tape, h, w, b, 1, 1)));
    fs.stages[s] = h;
  }
  return fs;
}

template <typename T>
TensorMap encoder_to_map(const EncoderWeights<T>& enc) {
  TensorMap map;
  for (std::size_t s = 0; s < enc.stages.size(); ++s) {
    const Shape ws = enc.stages[s].weight.shape();
    map[encoder_weight_name(s + 1)] = to_stored(enc.stages[s].weight, {static_cast<std::uint32_t>(ws.n),
                                                                         static_cast<std::uint32_t>(ws.c), 3u, 3u});
    map[encoder_bias_name(s + 1)] = to_stored(enc.stages[s].bias, {static_cast<std::uint32_t>(ws.n)});
  }
  return map;
}

template <typename T>
EncoderWeights<T> encoder_from_map(const TensorMap& map) {
  EncoderWeights<T> enc;
  std::size_t cin = 3;
  for (std::size_t s = 0; s < kEncoderWidths.size(); ++s) {
    const std::size_t cout = kEncoderWidths[s];
    const auto co = static_cast<std::uint32_t>(cout);
    const auto ci = static_cast<std::uint32_t>(cin);
    enc.stages.push_back({from_stored<T>(map, encoder_weight_name(s + 1), {co, ci, 3u, 3u}, Shape{cout, cin, 3, 3}),
                          from_stored<T>(map, encoder_bias_name(s + 1), {co}, channel_vector_shape(cout))});
    cin = cout;
  }
  return enc;
}

template <typename T>
void save_encoder(const EncoderWeights<T>& enc, const std::filesystem::path& path) {
  save_tensor_map(encoder_to_map(enc), path);
}

/// Loads external encoder weights ("enc.stage{s}.weight|bias"); the result is frozen.
template <typename T>
EncoderWeights<T> import_encoder(const std::filesystem::path& path) {
  return encoder_from_map<T>(load_tensor_map(path));
}

}  // namespace stsc
