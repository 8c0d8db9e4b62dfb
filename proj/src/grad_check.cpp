#include "hdlm/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "hdlm/errors.hpp"

namespace hdlm::num {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
  return fn(tape, vars).value().item();
}

}  // namespace

double central_difference(const std::function<double(double)>& g, double eps, Stencil stencil) {
  if (stencil == Stencil::kTwoPoint) return (g(eps) - g(-eps)) / (2.0 * eps);
  return (8.0 * (g(eps) - g(-eps)) - (g(2.0 * eps) - g(-2.0 * eps))) / (12.0 * eps);
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps, Stencil stencil) {
  GradCheckResult result;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var out = fn(tape, vars);
    tape.backward(out);
    for (Var v : vars) result.gradients.push_back(tape.grad(v));
  }

  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      const double numeric = central_difference(
          [&](double h) {
            probe[k][i] = saved + h;
            return evaluate(fn, probe);
          },
          eps, stencil);
      probe[k][i] = saved;
      const double analytic = result.gradients[k][i];
      const double err = relative_error(analytic, numeric);
      if (err > result.max_rel_error || (k == 0 && i == 0)) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace hdlm::num
