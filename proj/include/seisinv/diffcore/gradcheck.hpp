#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/diffcore/tape.hpp"

namespace seisinv::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares tape gradients with central differences for every element of every
/// parameter. `f` builds a scalar on a fresh tape. Relative error is
/// |a - n| / max(|a|, |n|, atol).
inline GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&)>& f,
                                  const std::vector<Parameter<double>*>& params, double eps = 1e-6,
                                  double atol = 1e-8) {
  auto eval = [&] {
    Tape<double> tape;
    const double v = f(tape).value()[0];
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite forward value");
    return v;
  };
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    auto out = f(tape);
    if (!std::isfinite(out.value()[0])) throw NumericalError("grad_check: non-finite forward value");
    tape.backward(out);
  }
  GradCheckResult r;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double x0 = p->value[i];
      p->value[i] = x0 + eps;
      const double fp = eval();
      p->value[i] = x0 - eps;
      const double fm = eval();
      p->value[i] = x0;
      const double num = (fp - fm) / (2 * eps);
      const double ana = p->grad[i];
      const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), atol});
      ++r.checked;
      if (err >= r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_param = p->name;
        r.worst_index = i;
      }
    }
  }
  return r;
}

}  // namespace seisinv::ad
