#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "convgot/autodiff.hpp"

namespace convgot {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Builds a scalar loss on the tape from parameters bound through the binder.
using LossBuilder = std::function<Var(ParamBinder&)>;

// Relative error used throughout: |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Compares reverse-mode adjoints of `loss` against central finite differences
// (step h) for every scalar of every parameter in `params`. Parameters are
// restored to their original values before returning.
GradCheckReport grad_check(ParamSet& params, const LossBuilder& loss, double h = 1e-4, double floor = 1e-6);

}  // namespace convgot
