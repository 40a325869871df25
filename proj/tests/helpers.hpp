#pragma once

#include "diffsteer/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace testutil {

// Relative error with a floor so near-zero pairs compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

// Central finite difference of eval() with respect to *slot.
inline double fd_grad(const std::function<double()>& eval, double* slot,
                      double h = 1e-5) {
  const double saved = *slot;
  *slot = saved + h;
  const double up = eval();
  *slot = saved - h;
  const double down = eval();
  *slot = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace testutil
