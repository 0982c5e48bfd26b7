#pragma once

// Central finite-difference oracle. Runs at 64-bit regardless of training
// precision; the scalar objective is the sum of the checked op's outputs.

#include <cmath>
#include <functional>
#include <string>

#include "fuseser/params.hpp"
#include "fuseser/tape.hpp"

namespace fuseser {

struct GradcheckReport {
  bool forward_finite = true;
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;

  bool pass(double tol = 1e-4) const { return forward_finite && max_rel_err < tol; }
};

// build_fn constructs the forward pass from bound params and returns any
// output var; it must be pure and deterministic. Inputs to be checked are
// registered as params by the caller.
template <typename BuildFn>
GradcheckReport finite_diff_gradcheck(ParamSet<double>& params, BuildFn&& build_fn,
                                      double eps = 1e-5) {
  GradcheckReport report;

  const auto scalar_forward = [&](Tape<double>& tape) {
    Bound<double> bound = bind(tape, params);
    const Var out = build_fn(tape, bound);
    return tape.sum_all(out);
  };

  // analytic pass
  Tape<double> tape;
  Bound<double> bound = bind(tape, params);
  const Var loss = tape.sum_all(build_fn(tape, bound));
  if (!std::isfinite(tape.val(loss).at(0, 0))) {
    report.forward_finite = false;
    return report;
  }
  tape.backward(loss);
  std::vector<Mat<double>> analytic;
  analytic.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(tape.grad(bound.vars[i]));

  // central differences, one element at a time
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param<double>& p = params.items[pi];
    for (std::size_t e = 0; e < p.value.size(); ++e) {
      const double saved = p.value.v[e];
      p.value.v[e] = saved + eps;
      Tape<double> tp;
      const double f_plus = tp.val(scalar_forward(tp)).at(0, 0);
      p.value.v[e] = saved - eps;
      Tape<double> tm;
      const double f_minus = tm.val(scalar_forward(tm)).at(0, 0);
      p.value.v[e] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        report.forward_finite = false;
        return report;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[pi].v[e];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = static_cast<int>(e);
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  return report;
}

}  // namespace fuseser
