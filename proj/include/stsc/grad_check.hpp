#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "stsc/error.hpp"
#include "stsc/rng.hpp"
#include "stsc/tape.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

struct GradCheckOptions {
  double epsilon = 1e-4;        // step is epsilon * max(1, |p|)
  double tolerance = 1e-4;      // max allowed relative error
  std::size_t samples = 20;     // elements checked; all elements if the total is smaller
  double min_abs_value = 0.0;   // skip elements with |p| below this (kinks at 0)
  double abs_floor = 1e-12;     // denominator floor; gradients below it compare absolutely
  std::uint64_t seed = 0;
  /// Piecewise-smooth functions (relu networks): when the one-sided slopes
  /// (f(p+h) - f(p)) / h and (f(p) - f(p-h)) / h disagree by more than a
  /// tenth of `tolerance`, the step straddles a kink. The step is shrunk tenfold up to
  /// `kink_retries` times, then the element is skipped and another is drawn.
  bool detect_kinks = false;
  std::size_t kink_retries = 1;
  /// Which parameter tensors may be sampled. Empty means all.
  std::vector<std::size_t> eligible;
};

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t skipped_kinks = 0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, abs_floor).
inline double relative_error(double analytic, double numeric, double abs_floor = 1e-12) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients with central finite differences.
///
/// `f` builds a scalar on the given tape from leaf Vars (one per entry of
/// `params`, recorded as tape.param) and returns it. It must be deterministic:
/// two forward passes with identical inputs are compared bitwise first and a
/// mismatch throws.
template <typename T>
GradCheckReport grad_check(const std::function<Var(Tape<T>&, const std::vector<Var>&)>& f,
                           std::vector<Tensor4<T>> params, const GradCheckOptions& opt = {}) {
  if (!(opt.epsilon > 0.0)) throw Error("grad_check: epsilon must be positive");

  auto evaluate = [&](const std::vector<Tensor4<T>>& ps) {
    Tape<T> tape;
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const auto& p : ps) vars.push_back(tape.param(p));
    return static_cast<double>(tape.value(f(tape, vars)).item());
  };

  Tape<T> tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.param(p));
  const Var out = f(tape, vars);
  const double base = static_cast<double>(tape.value(out).item());
  if (evaluate(params) != base) throw Error("grad_check: function is not deterministic");
  tape.backward(out);

  std::vector<std::size_t> eligible = opt.eligible;
  if (eligible.empty())
    for (std::size_t i = 0; i < params.size(); ++i) eligible.push_back(i);

  // (param, index) pairs that may be sampled.
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t p : eligible)
    for (std::size_t i = 0; i < params.at(p).size(); ++i)
      if (std::abs(static_cast<double>(params[p][i])) >= opt.min_abs_value) pool.emplace_back(p, i);
  GradCheckReport report;
  Xorshift64Star rng(opt.seed);
  for (std::size_t k = 0; k < pool.size() && report.entries.size() < opt.samples; ++k) {
    std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
    const auto [p, i] = pool[k];
    const T orig = params[p][i];
    double h = opt.epsilon * std::max(1.0, std::abs(static_cast<double>(orig)));
    std::optional<double> numeric;
    for (std::size_t attempt = 0; attempt <= (opt.detect_kinks ? opt.kink_retries : 0); ++attempt, h /= 10.0) {
      const T step = static_cast<T>(h);
      params[p][i] = orig + step;
      const double up = evaluate(params);
      params[p][i] = orig - step;
      const double down = evaluate(params);
      params[p][i] = orig;
      const double hs = static_cast<double>(step);
      if (opt.detect_kinks) {
        const double fwd = (up - base) / hs, bwd = (base - down) / hs;
        if (relative_error(fwd, bwd, opt.abs_floor) > 0.1 * opt.tolerance) continue;
      }
      numeric = (up - down) / (2.0 * hs);
      break;
    }
    if (!numeric) {
      ++report.skipped_kinks;
      continue;
    }
    GradCheckEntry e;
    e.param = p;
    e.index = i;
    e.analytic = static_cast<double>(tape.grad(vars[p])[i]);
    e.numeric = *numeric;
    e.rel_error = relative_error(e.analytic, e.numeric, opt.abs_floor);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  report.passed = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace stsc
