#pragma once

// Finite-difference checks for the float network layers. The scalar probe is
// sum(output .* R) for a fixed random R, evaluated in double.

#include <algorithm>
#include <cmath>
#include <functional>

#include "infmask/core/types.hpp"

namespace gradcheck {

using infmask::MatrixF;

inline double weighted_sum(const MatrixF& y, const MatrixF& r) {
  return (y.cast<double>().array() * r.cast<double>().array()).sum();
}

// Max relative error between `analytic` and central differences of f over
// the entries of `x` (at most `max_entries`, spread evenly). Each entry keeps
// the best of steps h, h/4 and h/16: large steps can straddle a ReLU kink or
// meet strong curvature, small ones lose digits to float rounding.
inline double max_rel_error(MatrixF& x, const MatrixF& analytic, const std::function<double()>& f, float h = 1e-2f,
                            int max_entries = 60) {
  const Eigen::Index n = x.size();
  const Eigen::Index stride = std::max<Eigen::Index>(1, n / max_entries);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; i += stride) {
    const float keep = x.data()[i];
    const double ana = analytic.data()[i];
    double best = 1e300;
    for (const float step : {h, h / 4, h / 16}) {
      x.data()[i] = keep + step;
      const double fp = f();
      x.data()[i] = keep - step;
      const double fm = f();
      x.data()[i] = keep;
      const double num = (fp - fm) / (2.0 * static_cast<double>(step));
      best = std::min(best, std::abs(num - ana) / std::max(1e-2, std::abs(num) + std::abs(ana)));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace gradcheck
