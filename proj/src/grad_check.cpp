#include "convgot/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace convgot {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(ParamSet& params, const LossBuilder& loss, double h, double floor) {
  params.zero_grad();
  {
    Tape tape;
    ParamBinder bind(tape, params);
    tape.backward(loss(bind));
  }

  auto evaluate = [&]() {
    Tape tape;
    const ParamSet& frozen = params;
    ParamBinder bind(tape, frozen);
    return loss(bind).scalar();
  };

  GradCheckReport report;
  for (auto& [name, p] : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate();
      p.value[i] = saved - h;
      const double down = evaluate();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(p.grad[i], numeric, floor);
      ++report.checked;
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = p.grad[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace convgot
