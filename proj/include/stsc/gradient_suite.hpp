#pragma once

// Finite-difference checks of every differentiable primitive and of the
// end-to-end training loss, at 64-bit precision.

#include <functional>
#include <string>
#include <vector>

#include "stsc/encoder.hpp"
#include "stsc/grad_check.hpp"
#include "stsc/loss.hpp"
#include "stsc/ops.hpp"
#include "stsc/rng.hpp"
#include "stsc/transformer.hpp"

namespace stsc {

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
  double tolerance = 0.0;
};

namespace detail {

inline Tensor4<double> random_tensor(Shape s, Xorshift64Star& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4<double> t(s);
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Wraps op(params) into the scalar sum(op(params) * R) with a fixed random R,
/// so every output element receives a distinct upstream gradient.
inline std::function<Var(Tape<double>&, const std::vector<Var>&)> weighted_sum(
    std::function<Var(Tape<double>&, const std::vector<Var>&)> op, std::uint64_t seed) {
  return [op, seed](Tape<double>& t, const std::vector<Var>& v) {
    const Var out = op(t, v);
    Xorshift64Star rng(seed);
    const Var r = t.constant(random_tensor(t.shape(out), rng));
    return sum(t, mul(t, out, r));
  };
}

}  // namespace detail

/// Primitive checks over `instances` random problems each.
inline std::vector<NamedGradCheck> primitive_gradient_checks(std::uint64_t seed, std::size_t instances,
                                                             double tolerance = 1e-4) {
  using F = std::function<Var(Tape<double>&, const std::vector<Var>&)>;
  std::vector<NamedGradCheck> out;
  Xorshift64Star rng(seed);
  auto run = [&](const std::string& name, F op, std::vector<Tensor4<double>> params, GradCheckOptions opt = {}) {
    opt.tolerance = tolerance;
    opt.seed = rng();
    opt.samples = 24;
    out.push_back({name, grad_check<double>(detail::weighted_sum(std::move(op), rng()), std::move(params), opt), tolerance});
  };
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 4 + rng.below(4), w = 4 + rng.below(4);
    const Shape s{n, c, h, w};
    const std::size_t cout = 1 + rng.below(3), k = rng.below(2) ? 3 : 1, stride = 1 + rng.below(2);
    const std::size_t pad = k == 3 ? 1 : rng.below(2);
    run("conv2d",
        [stride, pad](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], stride, pad); },
        {detail::random_tensor(s, rng), detail::random_tensor(Shape{cout, c, k, k}, rng),
         detail::random_tensor(channel_vector_shape(cout), rng)});
    run("instance_norm",
        [](Tape<double>& t, const std::vector<Var>& v) { return instance_norm(t, v[0], v[1], v[2], 1e-5); },
        {detail::random_tensor(s, rng), detail::random_tensor(channel_vector_shape(c), rng),
         detail::random_tensor(channel_vector_shape(c), rng)});
    GradCheckOptions kink;
    kink.min_abs_value = 1e-3;  // >= 10 * epsilon away from the relu kink
    run("relu", [](Tape<double>& t, const std::vector<Var>& v) { return relu(t, v[0]); }, {detail::random_tensor(s, rng)}, kink);
    run("sigmoid", [](Tape<double>& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); },
        {detail::random_tensor(s, rng, -4.0, 4.0)});
    run("nearest_upsample", [](Tape<double>& t, const std::vector<Var>& v) { return nearest_upsample(t, v[0], 2); },
        {detail::random_tensor(s, rng)});
    run("avg_pool2", [](Tape<double>& t, const std::vector<Var>& v) { return avg_pool2(t, v[0]); },
        {detail::random_tensor(Shape{n, c, 2 * (h / 2), 2 * (w / 2)}, rng)});
    run("gram", [](Tape<double>& t, const std::vector<Var>& v) { return gram(t, v[0]); }, {detail::random_tensor(s, rng)});
    run("mse", [](Tape<double>& t, const std::vector<Var>& v) { return mse(t, v[0], v[1]); },
        {detail::random_tensor(s, rng), detail::random_tensor(s, rng)});
    run("total_variation", [](Tape<double>& t, const std::vector<Var>& v) { return total_variation(t, v[0]); },
        {detail::random_tensor(s, rng)});
    run("add", [](Tape<double>& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); },
        {detail::random_tensor(s, rng), detail::random_tensor(s, rng)});
    run("sub", [](Tape<double>& t, const std::vector<Var>& v) { return sub(t, v[0], v[1]); },
        {detail::random_tensor(s, rng), detail::random_tensor(s, rng)});
    run("mul", [](Tape<double>& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); },
        {detail::random_tensor(s, rng), detail::random_tensor(s, rng)});
    run("scale_by", [](Tape<double>& t, const std::vector<Var>& v) { return scale_by(t, v[0], v[1]); },
        {detail::random_tensor(s, rng), detail::random_tensor(scalar_shape(), rng)});
    run("repeat_batch", [n](Tape<double>& t, const std::vector<Var>& v) { return repeat_batch(t, v[0], n + 1); },
        {detail::random_tensor(Shape{1, c, h, w}, rng)});
    const double alpha = 10.0 * rng.uniform() - 5.0;
    run("strength_gate", [alpha](Tape<double>& t, const std::vector<Var>& v) { return strength_gate(t, v[0], alpha); },
        {detail::random_tensor(scalar_shape(), rng, 0.1, 2.0)});
  }
  return out;
}

/// Gradient of the full training objective w.r.t. transformer parameters
/// (test-preset widths, 16x16 inputs). Samples `samples` parameters plus
/// every residual beta. Biases that feed an instance norm have an identically
/// zero gradient and are not sampled.
inline std::vector<NamedGradCheck> end_to_end_gradient_checks(std::uint64_t seed, std::size_t samples = 20,
                                                              double tolerance = 1e-3) {
  const ArchitectureConfig arch = ArchitectureConfig::test_preset();
  TransformerWeights<double> tw = init_weights<double>(arch, seed);
  Xorshift64Star rng(seed ^ 0xA5A5A5A5ULL);
  // Move away from the symmetric init so gains, shifts and betas all matter.
  for (auto& [name, p] : tw.params) {
    if (name.find(".gain") != std::string::npos) for (auto& v : p.data()) v = 0.5 + rng.uniform();
    if (name.find(".shift") != std::string::npos) for (auto& v : p.data()) v = 0.2 * (rng.uniform() - 0.5);
    if (name.find(".beta") != std::string::npos) for (auto& v : p.data()) v = 0.5 + rng.uniform();
  }
  const EncoderWeights<double> enc = generate_encoder<double>(seed + 1);
  const Tensor4<double> content = detail::random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  const StyleTarget<double> target = make_style_target(detail::random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0), enc);
  const double alpha = 3.0;
  const LossWeights lw;

  std::vector<std::string> names;
  std::vector<Tensor4<double>> params;
  for (const auto& [name, p] : tw.params) {
    names.push_back(name);
    params.push_back(p);
  }
  const ArchitectureConfig a = arch;
  auto f = [&, a](Tape<double>& t, const std::vector<Var>& v) {
    BoundParams bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound[names[i]] = v[i];
    const Var x = t.constant(content);
    const Var y = transformer_forward(t, x, bound, a, alpha);
    return total_loss(t, x, y, target, alpha, lw, enc).total;
  };

  // Many relu units sit close to their kink, so the step is kept small and
  // samples whose step still straddles one are redrawn. At 1e-6 the
  // difference quotient carries roughly 1e-9 of roundoff, which sets the floor
  // below which gradients are compared absolutely.
  GradCheckOptions general;
  general.epsilon = 1e-6;
  general.abs_floor = 1e-6;
  general.detect_kinks = true;
  general.tolerance = tolerance;
  general.samples = samples;
  general.seed = seed;
  GradCheckOptions betas = general;
  betas.samples = arch.residual_blocks;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& nm = names[i];
    const bool feeds_norm = nm.ends_with(".bias") && nm != conv_name(6, "bias");
    if (nm.ends_with(".beta")) {
      betas.eligible.push_back(i);
    } else if (!feeds_norm) {
      general.eligible.push_back(i);
    }
  }
  std::vector<NamedGradCheck> out;
  out.push_back({"end_to_end", grad_check<double>(f, params, general), tolerance});
  out.push_back({"end_to_end_beta", grad_check<double>(f, params, betas), tolerance});
  return out;
}

}  // namespace stsc
