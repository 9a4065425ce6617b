#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "relmask/autodiff.hpp"

namespace relmask {

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t input = 0;
  Index element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `fn(tape, vars)` must build the scalar on `tape` from `vars`.
/// Relative error per element: |a - n| / max(|a|, |n|, floor). Central
/// differences on an O(1) loss carry ~1e-11 absolute noise, so deep models
/// need a floor above that.
template <typename Fn>
GradcheckReport gradcheck_report(Fn&& fn, std::vector<TensorD> inputs, double eps = 1e-5,
                                 double floor = 1e-8) {
  auto evaluate = [&](const std::vector<TensorD>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return fn(tape, vars).value().item();
  };

  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  const Var<double> loss = fn(tape, vars);
  tape.backward(loss);

  GradcheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const TensorD analytic = tape.grad(vars[i]);
    for (Index j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + eps;
      const double up = evaluate(inputs);
      inputs[i][j] = saved - eps;
      const double down = evaluate(inputs);
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[j];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err > report.max_rel_error) report = {err, i, j, a, numeric};
    }
  }
  return report;
}

template <typename Fn>
double gradcheck(Fn&& fn, std::vector<TensorD> inputs, double eps = 1e-5, double floor = 1e-8) {
  return gradcheck_report(std::forward<Fn>(fn), std::move(inputs), eps, floor).max_rel_error;
}

}  // namespace relmask
