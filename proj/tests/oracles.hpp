#ifndef SNR_TESTS_ORACLES_HPP
#define SNR_TESTS_ORACLES_HPP

// Reference computations written independently of the library: textbook
// recursions, brute-force sums and dense linear algebra. Slow on purpose.

#include "snr/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using snr::Index;
using snr::Matrix;
using snr::Vector;

// -- splines --------------------------------------------------------------------

// B_{i,p}(x) by the Cox-de Boor recursion with 0/0 = 0. Half-open spans,
// except that x at the right end belongs to the last non-empty span.
inline double bspline(const Vector& t, Index i, int p, double x) {
  if (p == 0) {
    const double hi = t[t.size() - 1];
    if (x == hi) {
      // last non-empty span
      Index last = t.size() - 2;
      while (last > 0 && !(t[last + 1] > t[last])) --last;
      return i == last ? 1.0 : 0.0;
    }
    return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  }
  double out = 0;
  const double d1 = t[i + p] - t[i], d2 = t[i + p + 1] - t[i + 1];
  if (d1 > 0) out += (x - t[i]) / d1 * bspline(t, i, p - 1, x);
  if (d2 > 0) out += (t[i + p + 1] - x) / d2 * bspline(t, i + 1, p - 1, x);
  return out;
}

// Derivative of order `deriv` from the derivative recursion.
inline double bspline_deriv(const Vector& t, Index i, int p, double x, int deriv) {
  if (deriv == 0) return bspline(t, i, p, x);
  double out = 0;
  const double d1 = t[i + p] - t[i], d2 = t[i + p + 1] - t[i + 1];
  if (d1 > 0) out += p / d1 * bspline_deriv(t, i, p - 1, x, deriv - 1);
  if (d2 > 0) out -= p / d2 * bspline_deriv(t, i + 1, p - 1, x, deriv - 1);
  return out;
}

inline double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                           double fm, double fb, double whole, double tol, int depth) {
  const double m = (a + b) / 2, lm = (a + m) / 2, rm = (m + b) / 2;
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol)
    return left + right + (left + right - whole) / 15;
  return simpson_step(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-13, int depth = 40) {
  const double fa = f(a), fb = f(b), fm = f((a + b) / 2);
  return simpson_step(f, a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), tol, depth);
}

// -- enumeration ----------------------------------------------------------------

// s for index idx = sum_i s_i J^i.
inline std::vector<int> state_vector(Index idx, int J, Index n) {
  std::vector<int> s(n);
  for (Index i = 0; i < n; ++i) {
    s[i] = static_cast<int>(idx % J);
    idx /= J;
  }
  return s;
}

inline Index power(int J, Index n) {
  Index out = 1;
  for (Index i = 0; i < n; ++i) out *= J;
  return out;
}

inline double log_prior(const std::vector<int>& s, const snr::LatentParams& a,
                        const snr::Dataset& data, Index k) {
  const Index n = static_cast<Index>(s.size());
  double out = 0;
  switch (a.kind) {
    case snr::LatentKind::Iid:
      for (int v : s) out += std::log(a.p[v]);
      break;
    case snr::LatentKind::Markov:
      out = std::log(a.pi[s[0]]);
      for (Index i = 1; i < n; ++i) out += std::log(a.A(s[i - 1], s[i]));
      break;
    case snr::LatentKind::Covariate: {
      const int J = static_cast<int>(a.beta.rows()) + 1;
      for (Index i = 0; i < n; ++i) {
        Vector eta = Vector::Zero(J);
        for (int j = 1; j < J; ++j) {
          eta[j] = a.beta(j - 1, 0);
          for (Index m = 0; m < static_cast<Index>(data.covariates.size()); ++m)
            eta[j] += a.beta(j - 1, m + 1) * data.covariates[m](k, i);
        }
        double denom = 0;
        for (int j = 0; j < J; ++j) denom += std::exp(eta[j]);
        out += eta[s[i]] - std::log(denom);
      }
      break;
    }
  }
  return out;
}

inline Matrix dense_cov(const std::vector<int>& s, const snr::CovParams& c) {
  const Index n = static_cast<Index>(s.size());
  Matrix V = Matrix::Zero(n, n);
  switch (c.kind) {
    case snr::CovKind::IsoDiag: V.diagonal().setConstant(c.sigma2); break;
    case snr::CovKind::StateDiag:
      for (Index i = 0; i < n; ++i) V(i, i) = c.state_sigma2[s[i]];
      break;
    case snr::CovKind::Unrestricted: V = c.V; break;
    case snr::CovKind::HomogRI:
      V = c.sigma2 * (Matrix::Identity(n, n) + c.d * Matrix::Ones(n, n));
      break;
    case snr::CovKind::NonhomogRI: {
      Vector u(n);
      for (Index i = 0; i < n; ++i) u[i] = s[i] == 1 ? 1.0 : 0.0;
      V = c.sigma2 * (Matrix::Identity(n, n) + c.d1 * Matrix::Ones(n, n) + c.d2 * u * u.transpose());
      break;
    }
  }
  return V;
}

inline double log_mvn(const Vector& r, const Matrix& V) {
  Eigen::LLT<Matrix> llt(V);
  const Matrix L = llt.matrixL();
  const Vector z = L.triangularView<Eigen::Lower>().solve(r);
  return -0.5 * (r.size() * std::log(2 * M_PI) + z.squaredNorm()) -
         L.diagonal().array().log().sum();
}

struct Enumerated {
  Matrix joint;                 // N x J^n
  std::vector<Matrix> marginal; // J of N x n
  std::vector<Matrix> pairwise; // J*J of N x (n-1)
  Vector loglik;
};

// Full posterior by summing over every state vector.
inline Enumerated enumerate(const snr::Dataset& data, const Matrix& F, const snr::CovParams& cov,
                            const snr::LatentParams& alpha) {
  const Index N = data.y.rows(), n = data.y.cols();
  const int J = static_cast<int>(F.cols());
  const Index S = power(J, n);
  Enumerated out;
  out.joint.resize(N, S);
  out.loglik.resize(N);
  out.marginal.assign(J, Matrix::Zero(N, n));
  out.pairwise.assign(J * J, Matrix::Zero(N, std::max<Index>(n - 1, 0)));
  for (Index k = 0; k < N; ++k) {
    Vector logw(S);
    for (Index idx = 0; idx < S; ++idx) {
      const auto s = state_vector(idx, J, n);
      Vector r(n);
      for (Index i = 0; i < n; ++i) r[i] = data.y(k, i) - F(i, s[i]);
      logw[idx] = log_prior(s, alpha, data, k) + log_mvn(r, dense_cov(s, cov));
    }
    const double m = logw.maxCoeff();
    double total = 0;
    for (Index idx = 0; idx < S; ++idx) total += std::exp(logw[idx] - m);
    out.loglik[k] = m + std::log(total);
    for (Index idx = 0; idx < S; ++idx) {
      const double p = std::exp(logw[idx] - out.loglik[k]);
      out.joint(k, idx) = p;
      const auto s = state_vector(idx, J, n);
      for (Index i = 0; i < n; ++i) out.marginal[s[i]](k, i) += p;
      for (Index i = 0; i + 1 < n; ++i) out.pairwise[s[i] * J + s[i + 1]](k, i) += p;
    }
  }
  return out;
}

inline double total_loglik(const snr::Dataset& data, const Matrix& F, const snr::CovParams& cov,
                           const snr::LatentParams& alpha) {
  return enumerate(data, F, cov, alpha).loglik.sum();
}

// Central-difference Hessian of f at x.
inline Matrix fd_hessian(const std::function<double(const Vector&)>& f, const Vector& x,
                         double h) {
  const Index d = x.size();
  Matrix H(d, d);
  for (Index a = 0; a < d; ++a) {
    for (Index b = a; b < d; ++b) {
      auto at = [&](double sa, double sb) {
        Vector y = x;
        y[a] += sa;
        y[b] += sb;
        return f(y);
      };
      H(a, b) = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h);
      H(b, a) = H(a, b);
    }
  }
  return H;
}

// -- smoothing ------------------------------------------------------------------

// argmin over phi of sum_k (y_k - B phi)' W_k (y_k - B phi) + 2 lambda phi' R phi
// skipping replicate `skip`, as fitted values B phi. Plain normal equations.
inline Vector weighted_fit(const Matrix& B, const Matrix& R, const Matrix& W, const Matrix& y,
                           double lambda, Index skip = -1) {
  const Index K = B.cols();
  Matrix A = 2 * lambda * R;
  Vector b = Vector::Zero(K);
  for (Index k = 0; k < y.rows(); ++k) {
    if (k == skip) continue;
    const Matrix Wk = W.row(k).transpose().asDiagonal();
    A += B.transpose() * Wk * B;
    b += B.transpose() * Wk * y.row(k).transpose();
  }
  return B * A.fullPivLu().solve(b);
}

// Literal leave-one-replicate-out criterion.
inline double cv_refit(const Matrix& B, const Matrix& R, const Matrix& W, const Matrix& y,
                       double lambda) {
  double out = 0;
  for (Index k = 0; k < y.rows(); ++k) {
    const Vector e = weighted_fit(B, R, W, y, lambda, k) - y.row(k).transpose();
    out += e.dot(W.row(k).transpose().cwiseProduct(e));
  }
  return out;
}

// -- misc -----------------------------------------------------------------------

inline double max_rel(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

inline Matrix random_matrix(std::mt19937_64& rng, Index r, Index c, double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = z(rng);
  return m;
}

}  // namespace oracle

#endif  // SNR_TESTS_ORACLES_HPP
