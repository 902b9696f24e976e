#pragma once

// Central-difference gradient oracle. A coordinate whose two step sizes
// disagree sits on a ReLU kink and is skipped rather than compared.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// The 1e-5 floor sits above central-difference round-off (~1e-10 at unit
// loss scale), so gradients that are exactly zero compare as absolute error.
inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5});
}

// `loss` must evaluate the scalar objective at the current contents of `theta`.
inline void check_gradient(std::vector<double>& theta, const std::vector<double>& analytic,
                           const std::function<double()>& loss, GradCheck& out, double h = 1e-5,
                           std::size_t max_coords = 0) {
  const std::size_t n = theta.size();
  const std::size_t step = (max_coords == 0 || n <= max_coords) ? 1 : (n + max_coords - 1) / max_coords;
  for (std::size_t i = 0; i < n; i += step) {
    const double keep = theta[i];
    auto central = [&](double eps) {
      theta[i] = keep + eps;
      const double fp = loss();
      theta[i] = keep - eps;
      const double fm = loss();
      theta[i] = keep;
      return (fp - fm) / (2.0 * eps);
    };
    const double n1 = central(h);
    const double n2 = central(h * 0.5);
    if (rel_error(n1, n2) > 1e-4) {
      ++out.skipped;
      continue;
    }
    out.max_rel = std::max(out.max_rel, rel_error(analytic[i], n2));
    ++out.checked;
  }
}

}  // namespace oracle
