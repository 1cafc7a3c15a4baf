#ifndef SNR_NELDER_MEAD_HPP
#define SNR_NELDER_MEAD_HPP

// Minimal Nelder-Mead simplex minimiser (reflection 1, expansion 2,
// contraction 0.5, shrink 0.5).

#include "snr/core.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace snr {

struct NelderMeadOptions {
  int max_evaluations = 400;
  double spread_tolerance = 1e-10;  // max f - min f over the simplex
  double initial_step = 0.5;
};

template <int Dim>
struct NelderMeadResult {
  Eigen::Matrix<double, Dim, 1> point;
  double value = 0;
  int evaluations = 0;
  bool converged = false;
};

template <int Dim, typename Objective>
NelderMeadResult<Dim> nelder_mead(Objective&& f, const Eigen::Matrix<double, Dim, 1>& start,
                                  const NelderMeadOptions& opts = {}) {
  using Point = Eigen::Matrix<double, Dim, 1>;
  std::array<Point, Dim + 1> simplex;
  std::array<double, Dim + 1> values;
  int evals = 0;
  auto eval = [&](const Point& p) {
    ++evals;
    const double v = f(p);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  simplex[0] = start;
  values[0] = eval(start);
  for (int d = 0; d < Dim; ++d) {
    simplex[d + 1] = start;
    simplex[d + 1][d] += opts.initial_step;
    values[d + 1] = eval(simplex[d + 1]);
  }

  std::array<int, Dim + 1> order;
  bool converged = false;
  while (evals < opts.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    const int best = order.front(), worst = order.back(), second = order[Dim - 1];
    if (values[worst] - values[best] < opts.spread_tolerance) {
      converged = true;
      break;
    }

    Point centroid = Point::Zero();
    for (int i = 0; i <= Dim; ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= Dim;

    const Point reflected = centroid + (centroid - simplex[worst]);
    const double fr = eval(reflected);
    if (fr < values[best]) {
      const Point expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = eval(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    // Contraction: outside if the reflection improved on the worst point.
    const bool outside = fr < values[worst];
    const Point contracted = outside ? Point(centroid + 0.5 * (reflected - centroid))
                                     : Point(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = eval(contracted);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (int i = 0; i <= Dim; ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
      values[i] = eval(simplex[i]);
    }
  }

  const int best = static_cast<int>(std::min_element(values.begin(), values.end()) - values.begin());
  return {simplex[best], values[best], evals, converged};
}

}  // namespace snr

#endif  // SNR_NELDER_MEAD_HPP
