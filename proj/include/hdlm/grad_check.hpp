#pragma once

#include <functional>
#include <span>
#include <vector>

#include "hdlm/autodiff.hpp"

namespace hdlm::num {

// Builds a scalar from the given input Vars on the supplied tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  // Tape gradients for every input, in input order.
  std::vector<Tensor> gradients;
};

// kTwoPoint: (g(h) - g(-h)) / 2h. kFourPoint: the fourth-order central
// stencil, for losses whose tiny gradients sit below the two-point roundoff
// floor; use it with a larger step (around 1e-3).
enum class Stencil { kTwoPoint, kFourPoint };

// Derivative at 0 of g, where g(h) evaluates the function shifted by h along
// one coordinate.
double central_difference(const std::function<double(double)>& g, double eps, Stencil stencil = Stencil::kTwoPoint);

// Compares tape gradients with central finite differences, coordinate by
// coordinate. The error per coordinate is |a-b| / max(|a|, |b|, 1e-8).
GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps = 1e-5,
                           Stencil stencil = Stencil::kTwoPoint);

double relative_error(double analytic, double numeric);

}  // namespace hdlm::num
