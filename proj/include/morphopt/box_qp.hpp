#pragma once

#include <cmath>

#include "morphopt/geometry.hpp"

namespace morphopt {

struct BoxQpResult {
  VecX x;
  int iterations = 0;
  bool converged = false;
};

/**
 * Projected-Newton active-set solver for
 *
 *   min 0.5 x^T H x + g^T x   s.t.  lower <= x <= upper
 *
 * with H symmetric positive definite.  Each iteration fixes the variables
 * pinned at a bound with an outward gradient, takes a Newton step on the
 * rest and backtracks along the projected path.
 */
inline BoxQpResult solve_box_qp(const MatX& hessian, const VecX& gradient, const VecX& lower, const VecX& upper,
                                const VecX& x0, double tolerance = 1e-8, int max_iterations = 100) {
  const Eigen::Index n = gradient.size();
  BoxQpResult out;
  out.x = x0.cwiseMax(lower).cwiseMin(upper);
  auto value = [&](const VecX& x) { return 0.5 * x.dot(hessian * x) + gradient.dot(x); };
  double f = value(out.x);

  for (int it = 0; it < max_iterations; ++it) {
    out.iterations = it + 1;
    const VecX grad = gradient + hessian * out.x;
    std::vector<Eigen::Index> free;
    free.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lower = out.x[i] <= lower[i] && grad[i] > 0.0;
      const bool at_upper = out.x[i] >= upper[i] && grad[i] < 0.0;
      if (!at_lower && !at_upper) free.push_back(i);
    }
    if (free.empty()) {
      out.converged = true;
      return out;
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    MatX h_ff(nf, nf);
    VecX g_f(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      g_f[a] = grad[free[a]];
      for (Eigen::Index b = 0; b < nf; ++b) h_ff(a, b) = hessian(free[a], free[b]);
    }
    if (g_f.norm() < tolerance) {
      out.converged = true;
      return out;
    }
    Eigen::LLT<MatX> llt(h_ff);
    if (llt.info() != Eigen::Success) return out;
    const VecX step_f = -llt.solve(g_f);
    VecX step = VecX::Zero(n);
    for (Eigen::Index a = 0; a < nf; ++a) step[free[a]] = step_f[a];

    double alpha = 1.0;
    bool accepted = false;
    while (alpha > 1e-12) {
      const VecX candidate = (out.x + alpha * step).cwiseMax(lower).cwiseMin(upper);
      const double fc = value(candidate);
      if (fc <= f + 0.1 * grad.dot(candidate - out.x)) {
        const double improvement = f - fc;
        out.x = candidate;
        f = fc;
        accepted = true;
        if (improvement < tolerance * tolerance * (1.0 + std::abs(f))) {
          out.converged = true;
          return out;
        }
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      out.converged = true;
      return out;
    }
  }
  return out;
}

}  // namespace morphopt
