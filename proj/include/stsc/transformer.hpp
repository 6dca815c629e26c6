#pragma once

// Strength-conditioned image transformer y = T_w(x, alpha).
//
//   conv9x9/1 (w1) -> IN -> relu
//   conv3x3/2 (w2) -> IN -> relu
//   conv3x3/2 (w3) -> IN -> relu
//   R residual blocks at width w3:  u + gamma_i * f_i(u)
//       f_i = conv3x3 -> IN -> relu -> conv3x3 -> IN
//       gamma_i = 2|alpha*beta_i| / (1 + |alpha*beta_i|)
//   nearest x2 -> conv3x3 (w2) -> IN -> relu
//   nearest x2 -> conv3x3 (w1) -> IN -> relu
//   conv9x9 (3) -> sigmoid
//
// All convolutions use mirror padding k/2. Parameter names:
//   t.conv{1..6}.weight|bias, t.in{1..5}.gain|shift,
//   t.res{i}.conv{1|2}.weight|bias, t.res{i}.in{1|2}.gain|shift, t.res{i}.beta

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stsc/checkpoint.hpp"
#include "stsc/error.hpp"
#include "stsc/ops.hpp"
#include "stsc/rng.hpp"
#include "stsc/tape.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

struct ArchitectureConfig {
  std::array<std::size_t, 3> widths = {32, 64, 128};
  std::size_t residual_blocks = 5;

  static ArchitectureConfig test_preset() { return {{8, 16, 32}, 5}; }

  void validate() const {
    for (auto w : widths)
      if (w == 0) throw ConfigError("architecture widths must be positive");
    if (residual_blocks < 1) throw ConfigError("architecture needs at least one residual block");
  }

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

/// Residual-branch gate 2|a*b| / (1 + |a*b|), in [0, 2).
inline double gamma(double alpha, double beta) {
  const double t = std::abs(alpha * beta);
  if (t < 1.0) return 2.0 * t / (1.0 + t);
  // Past |a*b| ~ 1e16 the quotient rounds up to 2; keep it below the bound.
  // Also finite when a*b overflows.
  return std::min(2.0 - 2.0 / (1.0 + t), std::nextafter(2.0, 0.0));
}

/// d gamma / d beta = 2*alpha*sign(alpha*beta) / (1 + |alpha*beta|)^2, taken as 0 at alpha*beta = 0.
inline double gamma_dbeta(double alpha, double beta) {
  const double ab = alpha * beta;
  if (ab == 0.0) return 0.0;
  const double t = std::abs(ab);
  const double sign = ab > 0.0 ? 1.0 : -1.0;
  return 2.0 * alpha * sign / ((1.0 + t) * (1.0 + t));
}

/// Records gamma(alpha, beta) on the tape; differentiable in beta only.
template <typename T>
Var strength_gate(Tape<T>& tape, Var beta, double alpha) {
  detail::require_same(tape.shape(beta), scalar_shape(), "strength_gate beta");
  const double b = static_cast<double>(tape.value(beta)[0]);
  return tape.record(Tensor4<T>::scalar(static_cast<T>(gamma(alpha, b))), tape.requires_grad(beta),
                     [beta, alpha](Tape<T>& t, std::size_t self) {
                       const double b = static_cast<double>(t.value(beta)[0]);
                       t.grad_buffer(beta)[0] += t.grad_buffer(self)[0] * static_cast<T>(gamma_dbeta(alpha, b));
                     });
}

inline std::string conv_name(std::size_t j, const char* what) { return "t.conv" + std::to_string(j) + "." + what; }
inline std::string norm_name(std::size_t j, const char* what) { return "t.in" + std::to_string(j) + "." + what; }
inline std::string res_name(std::size_t i, const std::string& what) { return "t.res" + std::to_string(i) + "." + what; }

/// One trainable tensor in the architecture: its name, in-memory shape and
/// checkpoint dims.
struct ParamSpec {
  enum class Kind { ConvWeight, Bias, Gain, Shift, Beta };
  std::string name;
  Kind kind;
  Shape shape;

  std::vector<std::uint32_t> dims() const {
    switch (kind) {
      case Kind::ConvWeight:
        return {static_cast<std::uint32_t>(shape.n), static_cast<std::uint32_t>(shape.c),
                static_cast<std::uint32_t>(shape.h), static_cast<std::uint32_t>(shape.w)};
      case Kind::Beta:
        return {};
      default:
        return {static_cast<std::uint32_t>(shape.c)};
    }
  }
};

/// All parameters in forward order; this order drives initialization draws.
inline std::vector<ParamSpec> parameter_specs(const ArchitectureConfig& arch) {
  arch.validate();
  std::vector<ParamSpec> out;
  auto conv = [&](std::string w, std::string b, std::size_t cin, std::size_t cout, std::size_t k) {
    out.push_back({std::move(w), ParamSpec::Kind::ConvWeight, Shape{cout, cin, k, k}});
    out.push_back({std::move(b), ParamSpec::Kind::Bias, channel_vector_shape(cout)});
  };
  auto norm = [&](std::string g, std::string s, std::size_t c) {
    out.push_back({std::move(g), ParamSpec::Kind::Gain, channel_vector_shape(c)});
    out.push_back({std::move(s), ParamSpec::Kind::Shift, channel_vector_shape(c)});
  };
  const auto [w1, w2, w3] = arch.widths;
  conv(conv_name(1, "weight"), conv_name(1, "bias"), 3, w1, 9);
  norm(norm_name(1, "gain"), norm_name(1, "shift"), w1);
  conv(conv_name(2, "weight"), conv_name(2, "bias"), w1, w2, 3);
  norm(norm_name(2, "gain"), norm_name(2, "shift"), w2);
  conv(conv_name(3, "weight"), conv_name(3, "bias"), w2, w3, 3);
  norm(norm_name(3, "gain"), norm_name(3, "shift"), w3);
  for (std::size_t i = 1; i <= arch.residual_blocks; ++i) {
    conv(res_name(i, "conv1.weight"), res_name(i, "conv1.bias"), w3, w3, 3);
    norm(res_name(i, "in1.gain"), res_name(i, "in1.shift"), w3);
    conv(res_name(i, "conv2.weight"), res_name(i, "conv2.bias"), w3, w3, 3);
    norm(res_name(i, "in2.gain"), res_name(i, "in2.shift"), w3);
    out.push_back({res_name(i, "beta"), ParamSpec::Kind::Beta, scalar_shape()});
  }
  conv(conv_name(4, "weight"), conv_name(4, "bias"), w3, w2, 3);
  norm(norm_name(4, "gain"), norm_name(4, "shift"), w2);
  conv(conv_name(5, "weight"), conv_name(5, "bias"), w2, w1, 3);
  norm(norm_name(5, "gain"), norm_name(5, "shift"), w1);
  conv(conv_name(6, "weight"), conv_name(6, "bias"), w1, 3, 9);
  return out;
}

inline std::size_t parameter_count(const ArchitectureConfig& arch) {
  std::size_t n = 0;
  for (const auto& p : parameter_specs(arch)) n += p.shape.size();
  return n;
}

/// True for parameters inside residual branches (everything under t.res{i}.
/// except beta), i.e. those gated off at alpha = 0.
inline bool is_residual_branch_param(const std::string& name) {
  return name.rfind("t.res", 0) == 0 && name.find(".beta") == std::string::npos;
}

template <typename T>
struct TransformerWeights {
  ArchitectureConfig arch;
  std::map<std::string, Tensor4<T>> params;

  const Tensor4<T>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw Error("unknown parameter " + name);
    return it->second;
  }
  Tensor4<T>& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("unknown parameter " + name);
    return it->second;
  }

  T beta(std::size_t block) const { return at(res_name(block, "beta"))[0]; }

  friend bool operator==(const TransformerWeights&, const TransformerWeights&) = default;
};

/// Conv weights ~ N(0, 2 / (c_in k^2)) rounded to float32, biases 0, norm
/// gains 1, shifts 0, every beta 1.
template <typename T>
TransformerWeights<T> init_weights(const ArchitectureConfig& arch, std::uint64_t seed) {
  Xorshift64Star rng(seed);
  TransformerWeights<T> tw;
  tw.arch = arch;
  for (const auto& spec : parameter_specs(arch)) {
    Tensor4<T> t(spec.shape);
    switch (spec.kind) {
      case ParamSpec::Kind::ConvWeight: {
        const double stddev = std::sqrt(2.0 / static_cast<double>(spec.shape.c * spec.shape.h * spec.shape.w));
        for (auto& v : t.data()) v = static_cast<T>(static_cast<float>(stddev * rng.gaussian()));
        break;
      }
      case ParamSpec::Kind::Gain:
      case ParamSpec::Kind::Beta:
        for (auto& v : t.data()) v = T{1};
        break;
      default:
        break;
    }
    tw.params.emplace(spec.name, std::move(t));
  }
  return tw;
}

/// Parameters recorded on a tape, addressed by name.
using BoundParams = std::map<std::string, Var>;

/// Records every parameter as a trainable leaf (`trainable`) or as a constant.
template <typename T>
BoundParams bind(Tape<T>& tape, const TransformerWeights<T>& tw, bool trainable) {
  BoundParams out;
  for (const auto& [name, value] : tw.params) out[name] = trainable ? tape.param(value) : tape.constant(value);
  return out;
}

struct ResidualParams {
  Var conv1_weight, conv1_bias, in1_gain, in1_shift;
  Var conv2_weight, conv2_bias, in2_gain, in2_shift;
  Var beta;
};

inline ResidualParams residual_params(const BoundParams& p, std::size_t block) {
  auto get = [&](const std::string& what) { return p.at(res_name(block, what)); };
  return {get("conv1.weight"), get("conv1.bias"), get("in1.gain"), get("in1.shift"),
          get("conv2.weight"), get("conv2.bias"), get("in2.gain"), get("in2.shift"),
          get("beta")};
}

inline constexpr double kInstanceNormEps = 1e-5;

/// f_i(u) = IN(conv(relu(IN(conv(u))))).
template <typename T>
Var residual_branch(Tape<T>& tape, Var u, const ResidualParams& rp) {
  const T eps = static_cast<T>(kInstanceNormEps);
  Var h = conv2d(tape, u, rp.conv1_weight, rp.conv1_bias, 1, 1);
  h = relu(tape, instance_norm(tape, h, rp.in1_gain, rp.in1_shift, eps));
  h = conv2d(tape, h, rp.conv2_weight, rp.conv2_bias, 1, 1);
  return instance_norm(tape, h, rp.in2_gain, rp.in2_shift, eps);
}

/// u + gamma(alpha, beta_i) * f_i(u). No activation after the sum.
template <typename T>
Var residual_block_forward(Tape<T>& tape, Var u, const ResidualParams& rp, double alpha) {
  const std::size_t width = tape.shape(rp.conv1_weight).c;
  if (tape.shape(u).c != width) {
    throw ShapeError("residual block: input channels c = " + std::to_string(tape.shape(u).c) +
                     " but block width is " + std::to_string(width));
  }
  const Var gate = strength_gate(tape, rp.beta, alpha);
  return add(tape, u, scale_by(tape, residual_branch(tape, u, rp), gate));
}

/// Checks that an image of spatial size h x w can pass through the network.
inline void check_transformer_input(const Shape& xs) {
  if (xs.c != 3) throw ShapeError("transformer: expected 3 input channels, got " + std::to_string(xs.c));
  if (xs.h % 4 != 0 || xs.w % 4 != 0 || xs.h < 8 || xs.w < 8) {
    throw ShapeError("transformer: spatial dims must be multiples of 4 and at least 8, got " + xs.str());
  }
}

template <typename T>
Var transformer_forward(Tape<T>& tape, Var x, const BoundParams& p, const ArchitectureConfig& arch, double alpha) {
  check_transformer_input(tape.shape(x));
  if (!std::isfinite(alpha)) throw Error("transformer: alpha must be finite");
  const T eps = static_cast<T>(kInstanceNormEps);
  auto conv_in_relu = [&](Var h, std::size_t j, std::size_t stride, std::size_t pad) {
    h = conv2d(tape, h, p.at(conv_name(j, "weight")), p.at(conv_name(j, "bias")), stride, pad);
    return relu(tape, instance_norm(tape, h, p.at(norm_name(j, "gain")), p.at(norm_name(j, "shift")), eps));
  };
  Var h = conv_in_relu(x, 1, 1, 4);
  h = conv_in_relu(h, 2, 2, 1);
  h = conv_in_relu(h, 3, 2, 1);
  for (std::size_t i = 1; i <= arch.residual_blocks; ++i) h = residual_block_forward(tape, h, residual_params(p, i), alpha);
  h = conv_in_relu(nearest_upsample(tape, h, 2), 4, 1, 1);
  h = conv_in_relu(nearest_upsample(tape, h, 2), 5, 1, 1);
  h = conv2d(tape, h, p.at(conv_name(6, "weight")), p.at(conv_name(6, "bias")), 1, 4);
  return sigmoid(tape, h);
}

/// Inference without gradients: stylizes `x` at strength `alpha`.
template <typename T>
Tensor4<T> stylize(const TransformerWeights<T>& tw, const Tensor4<T>& x, double alpha) {
  Tape<T> tape;
  const BoundParams p = bind(tape, tw, false);
  const Var y = transformer_forward(tape, tape.constant(x), p, tw.arch, alpha);
  return tape.value(y);
}

template <typename T>
TensorMap transformer_to_map(const TransformerWeights<T>& tw) {
  TensorMap map;
  for (const auto& spec : parameter_specs(tw.arch)) map[spec.name] = to_stored(tw.at(spec.name), spec.dims());
  return map;
}

/// Infers the architecture from tensor shapes, then loads every parameter.
template <typename T>
TransformerWeights<T> transformer_from_map(const TensorMap& map) {
  ArchitectureConfig arch;
  auto dim0 = [&](const std::string& name) -> std::size_t {
    auto it = map.find(name);
    if (it == map.end()) throw CheckpointError(CheckpointError::Kind::MissingTensor, "missing tensor " + name);
    if (it->second.dims.empty()) throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "bad dims for " + name);
    return it->second.dims[0];
  };
  arch.widths = {dim0(conv_name(1, "weight")), dim0(conv_name(2, "weight")), dim0(conv_name(3, "weight"))};
  arch.residual_blocks = 0;
  while (map.count(res_name(arch.residual_blocks + 1, "beta"))) ++arch.residual_blocks;
  if (arch.residual_blocks == 0) throw CheckpointError(CheckpointError::Kind::MissingTensor, "missing tensor t.res1.beta");
  TransformerWeights<T> tw;
  tw.arch = arch;
  for (const auto& spec : parameter_specs(arch)) tw.params.emplace(spec.name, from_stored<T>(map, spec.name, spec.dims(), spec.shape));
  return tw;
}

}  // namespace stsc
