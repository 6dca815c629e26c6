#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "stsc/encoder.hpp"
#include "stsc/error.hpp"
#include "stsc/ops.hpp"
#include "stsc/tape.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

struct LossWeights {
  double lambda_content = 1.0;
  double lambda_style = 5.0;
  double lambda_tv = 1e-5;

  void validate() const {
    if (!(lambda_content >= 0.0 && lambda_style >= 0.0 && lambda_tv >= 0.0))
      throw ConfigError("loss weights must be non-negative");
  }
};

/// Loss values for one batch at one strength.
/// total = lambda_content*content + alpha_used*lambda_style*style + lambda_tv*tv
struct LossBreakdown {
  double content = 0.0;
  double style = 0.0;
  double tv = 0.0;
  double total = 0.0;
  double alpha_used = 0.0;

  static double combine(double content, double style, double tv, double alpha, const LossWeights& lw) {
    return lw.lambda_content * content + alpha * lw.lambda_style * style + lw.lambda_tv * tv;
  }
};

/// Gram matrices of the style image at every style layer, each (1, 1, c, c).
template <typename T>
struct StyleTarget {
  std::array<Tensor4<T>, 4> grams;
};

template <typename T>
StyleTarget<T> make_style_target(const Tensor4<T>& style_image, const EncoderWeights<T>& enc) {
  if (style_image.shape().n != 1) throw ShapeError("style target: style image batch must be 1");
  Tape<T> tape;
  const FeatureSet fs = encode(tape, tape.constant(style_image), enc);
  StyleTarget<T> target;
  for (std::size_t s = 0; s < 4; ++s) target.grams[s] = tape.value(gram(tape, fs.stages[s]));
  return target;
}

/// mse between content-layer (stage 3) features.
template <typename T>
Var content_loss(Tape<T>& tape, const FeatureSet& y, const FeatureSet& x) {
  return mse(tape, y.content(), x.content());
}

/// Sum over style layers of ||gram(y_s) - G_s||_F^2 / c_s^2, averaged over the batch.
template <typename T>
Var style_loss(Tape<T>& tape, const FeatureSet& y, const StyleTarget<T>& target) {
  Var acc{};
  for (std::size_t s = 0; s < 4; ++s) {
    const Shape fs = tape.shape(y.stages[s]);
    const Shape gs = target.grams[s].shape();
    if (gs.n != 1 || gs.c != 1 || gs.h != fs.c || gs.w != fs.c) {
      throw ShapeError("style_loss: layer " + std::to_string(s + 1) + " has " + std::to_string(fs.c) +
                       " channels but the target Gram is " + gs.str());
    }
    const Var g = gram(tape, y.stages[s]);
    const Var tgt = repeat_batch(tape, tape.constant(target.grams[s]), fs.n);
    const Var term = mse(tape, g, tgt);  // mean over n*c*c elements
    acc = s == 0 ? term : add(tape, acc, term);
  }
  return acc;
}

struct LossTerms {
  Var content, style, tv, total;
};

/// Full objective for stylized batch `y` of content batch `x_content`.
/// Both are encoded once; `total` is differentiable w.r.t. y.
template <typename T>
LossTerms total_loss(Tape<T>& tape, Var x_content, Var y, const StyleTarget<T>& target, double alpha,
                     const LossWeights& lw, const EncoderWeights<T>& enc) {
  detail::require_same(tape.shape(x_content), tape.shape(y), "total_loss images");
  const FeatureSet fx = encode(tape, x_content, enc);
  const FeatureSet fy = encode(tape, y, enc);
  LossTerms t;
  t.content = content_loss(tape, fy, fx);
  t.style = style_loss(tape, fy, target);
  t.tv = total_variation(tape, y);
  const Var weighted_content = scale(tape, t.content, static_cast<T>(lw.lambda_content));
  const Var weighted_style = scale(tape, t.style, static_cast<T>(alpha * lw.lambda_style));
  const Var weighted_tv = scale(tape, t.tv, static_cast<T>(lw.lambda_tv));
  t.total = add(tape, add(tape, weighted_content, weighted_style), weighted_tv);
  return t;
}

/// Reads component values off the tape. `total` is recombined in double
/// precision so the breakdown invariant holds exactly at any tensor precision.
template <typename T>
LossBreakdown breakdown(const Tape<T>& tape, const LossTerms& t, double alpha, const LossWeights& lw) {
  LossBreakdown b;
  b.content = static_cast<double>(tape.value(t.content)[0]);
  b.style = static_cast<double>(tape.value(t.style)[0]);
  b.tv = static_cast<double>(tape.value(t.tv)[0]);
  b.alpha_used = alpha;
  b.total = LossBreakdown::combine(b.content, b.style, b.tv, alpha, lw);
  return b;
}

/// Convenience: loss of fixed images without recording gradients.
template <typename T>
LossBreakdown evaluate_loss(const Tensor4<T>& x_content, const Tensor4<T>& y, const StyleTarget<T>& target,
                            double alpha, const LossWeights& lw, const EncoderWeights<T>& enc) {
  Tape<T> tape;
  const LossTerms t = total_loss(tape, tape.constant(x_content), tape.constant(y), target, alpha, lw, enc);
  return breakdown(tape, t, alpha, lw);
}

}  // namespace stsc
