#include "snr/cv.hpp"

#include <cmath>

namespace snr {

std::vector<double> default_cv_grid() {
  std::vector<double> grid(25);
  for (int g = 0; g < 25; ++g) grid[g] = std::pow(10.0, -6.0 + 8.0 * g / 24.0);
  return grid;
}

Vector full_fit(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                double lambda) {
  const Vector w = weights.colwise().sum().transpose();
  const Vector wy = weights.cwiseProduct(y).colwise().sum().transpose();
  return B * penalized_solve(B, R, w, wy, lambda).phi;
}

Vector leave_one_out_fit(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                         double lambda, Index k) {
  Vector w = Vector::Zero(y.cols()), wy = Vector::Zero(y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    if (r == k) continue;
    w += weights.row(r).transpose();
    wy += weights.row(r).cwiseProduct(y.row(r)).transpose();
  }
  const Matrix A = B.transpose() * w.asDiagonal() * B + 2.0 * lambda * R;
  const Vector b = B.transpose() * wy;
  Eigen::FullPivLU<Matrix> lu(A);
  lu.setThreshold(1e-11);
  if (lu.isInvertible()) return B * lu.solve(b);

  // The remaining replicates leave part of the fit free (no data, or too few
  // weighted points for the null space of R). Of all maximisers take the one
  // closest to y_k in its own weights.
  const Vector phi0 = A.completeOrthogonalDecomposition().solve(b);
  const Matrix Z = lu.kernel();
  const Vector sw = weights.row(k).transpose().cwiseSqrt();
  const Vector target = sw.cwiseProduct(y.row(k).transpose() - B * phi0);
  const Matrix design = sw.asDiagonal() * (B * Z);
  const Vector c = design.completeOrthogonalDecomposition().solve(target);
  return B * (phi0 + Z * c);
}

double cv_score_direct(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                       double lambda) {
  double acc = 0;
  for (Index k = 0; k < y.rows(); ++k) {
    const Vector e = y.row(k).transpose() - leave_one_out_fit(B, R, weights, y, lambda, k);
    acc += (weights.row(k).transpose().array() * e.array().square()).sum();
  }
  return acc;
}

CvScore cv_score(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                 double lambda) {
  const Index N = y.rows(), n = y.cols();
  const Vector w = weights.colwise().sum().transpose();
  const Vector wy = weights.cwiseProduct(y).colwise().sum().transpose();
  const PenalizedSolve fit = penalized_solve(B, R, w, wy, lambda, true);
  const Vector f = B * fit.phi;

  CvScore out;
  const Matrix I = Matrix::Identity(n, n);
  for (Index k = 0; k < N; ++k) {
    const auto wk = weights.row(k);
    const Matrix H = fit.smoother * wk.transpose().asDiagonal();
    Eigen::PartialPivLU<Matrix> lu(I - H);
    Vector e;
    if (lu.rcond() < 1e-8) {
      e = leave_one_out_fit(B, R, weights, y, lambda, k) - y.row(k).transpose();
      ++out.direct_fallbacks;
    } else {
      e = lu.solve(f - y.row(k).transpose());
    }
    out.value += (wk.transpose().array() * e.array().square()).sum();
  }
  return out;
}

CvResult select_lambdas(const Dataset& data, const ModelSpec& spec, const FitConfig& config,
                        const CvConfig& cv) {
  if (!is_diagonal(spec.cov.kind))
    throw Error(ErrorCode::Unsupported, "CV unsupported for this covariance kind");
  validate(data, spec.latent, spec.cov, config.enumeration_cap, config.std_errors);

  CvResult result;
  result.grid = cv.grid.empty() ? default_cv_grid() : cv.grid;
  for (std::size_t g = 0; g < result.grid.size(); ++g)
    if (!(result.grid[g] > 0) || (g > 0 && !(result.grid[g] > result.grid[g - 1])))
      throw Error(ErrorCode::InvalidParams, "CV grid must be positive and strictly increasing");

  const int J = spec.latent.states;
  const int K = config.K > 0 ? config.K : default_basis_size(data.points());
  FitContext ctx(data, spec, build_basis(data.x, K), config.path, config.enumeration_cap);

  FitConfig inner = config;
  inner.std_errors = false;
  Theta theta = initialize(ctx, config);
  Vector lambdas = theta.lambdas;

  const Index G = static_cast<Index>(result.grid.size());
  for (int outer = 0; outer < cv.outer_max_iter; ++outer) {
    theta.lambdas = lambdas;
    const FitReport fit = ecm_fit(ctx, theta, inner);
    const Vector variances = state_variances(fit.theta.cov, J);

    CvIteration iter;
    iter.lambdas_in = lambdas;
    iter.scores.resize(J, G);
    iter.lambdas_out.resize(J);
    for (int j = 0; j < J; ++j) {
      const Matrix W = fit.posteriors.marginal[j] / variances[j];
      Index best = 0;
      for (Index g = 0; g < G; ++g) {
        const CvScore s = cv_score(ctx.B(), ctx.R(), W, data.y, result.grid[g]);
        iter.scores(j, g) = s.value;
        result.direct_fallbacks += s.direct_fallbacks;
        if (s.value < iter.scores(j, best)) best = g;
      }
      iter.lambdas_out[j] = result.grid[best];
    }
    const Vector next = iter.lambdas_out;
    result.iterations.push_back(std::move(iter));
    theta = fit.theta;

    const bool stable =
        ((next - lambdas).array().abs() <= cv.outer_tol * lambdas.array().abs()).all();
    lambdas = next;
    if (stable || G == 1) {
      result.stabilized = true;
      break;
    }
  }

  result.lambdas = lambdas;
  theta.lambdas = lambdas;
  result.fit = ecm_fit(ctx, theta, config);
  return result;
}

}  // namespace snr
