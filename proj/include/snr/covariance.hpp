#ifndef SNR_COVARIANCE_HPP
#define SNR_COVARIANCE_HPP

// State-dependent residual covariances V_s, their Gaussian log-densities and
// the conditional-maximisation updates for every covariance kind.

#include "snr/model.hpp"
#include "snr/states.hpp"

#include <string>
#include <vector>

namespace snr {

/// Coefficients of V_s^{-1} and log|V_s| for the random intercept kinds.
/// With U = [1, u] (u the indicator of state 2) and D = diag(d1, d2),
///   V_s^{-1} = sigma^-2 (I - U M U'),  M = D (I + U'U D)^{-1},
///   log|V_s| = n log sigma^2 + log det(I + D U'U).
/// Both depend on s only through m = #{i : s_i = 2}.
struct InterceptTerms {
  double m11 = 0, m12 = 0, m22 = 0;
  double logdet = 0;  // excludes the n log sigma^2 part
};

InterceptTerms intercept_terms(double d1, double d2, Index n, Index m);

class CovStructure {
 public:
  CovStructure(CovParams params, Index n);

  const CovParams& params() const { return params_; }
  CovKind kind() const { return params_.kind; }
  Index dim() const { return n_; }

  /// log N(r; 0, V_s) for the residual r = y - f_s(x).
  double log_density(const Eigen::Ref<const Vector>& r, StateView s) const;

  /// log|V_s|.
  double log_det(StateView s) const;
  /// Dense V_s and V_s^{-1}.
  Matrix dense(StateView s) const;
  Matrix inverse(StateView s) const;

 private:
  CovParams params_;
  Index n_;
  Eigen::LLT<Matrix> llt_;             // Unrestricted
  Matrix v_inverse_;                   // Unrestricted
  double unrestricted_logdet_ = 0;
  std::vector<InterceptTerms> terms_;  // HomogRI / NonhomogRI, indexed by m
};

/// Gaussian log-density of y around mean under V_s.
double log_mvn_density(const Vector& y, const Vector& mean, const CovStructure& cov, StateView s);

/// Residual sufficient statistics for the random intercept updates, grouped
/// by m = #{i : s_i = 2}: weight, sum p r'r, and sum p c c' for
/// c = (1'r, u'r), all summed over replicates and state vectors.
struct InterceptStats {
  Index replicates = 0;
  Index points = 0;
  Vector weight;                      // (n+1)
  Vector rr;                          // (n+1)
  std::vector<Eigen::Matrix2d> cc;    // (n+1)

  double total_rr() const { return rr.sum(); }
  double total_c1_squared() const;
};

/// F is the n x J matrix of f_j(x_i).
InterceptStats intercept_stats(const Dataset& data, const Matrix& joint, const StateSpace& space,
                               const Matrix& F);

/// Expected Gaussian part of the complete-data log-likelihood,
///   -1/2 sum_k sum_s p_k(s) [r'V_s^{-1}r + log|V_s|],
/// for the random intercept kinds, from the grouped statistics.
double expected_gaussian_term(const InterceptStats& stats, const CovParams& cov);

/// Same quantity by direct summation, any covariance kind.
double expected_gaussian_term(const Dataset& data, const Matrix& joint, const StateSpace& space,
                              const Matrix& F, const CovStructure& cov);

/// Posterior-weighted residual outer-product mean. A ridge of
/// 1e-10 trace/n is added (and noted) when the result is not positive definite.
Matrix update_unrestricted(const Dataset& data, const Matrix& joint, const StateSpace& space,
                           const Matrix& F, std::vector<std::string>* notes = nullptr);

/// Closed-form maximiser over (sigma^2, d) for V = sigma^2 (I + d 11').
/// A negative moment estimate of d is clamped to 0 and sigma^2 re-maximised
/// on that boundary. Throws NonPositiveSigma for zero residuals.
CovParams update_homog_ri(const InterceptStats& stats, std::vector<std::string>* notes = nullptr);
CovParams update_homog_ri(const Dataset& data, const Matrix& joint, const StateSpace& space,
                          const Matrix& F, std::vector<std::string>* notes = nullptr);

/// Conditional maximiser over (log sigma^2, log d1, log d2) by Nelder-Mead,
/// started at `previous`. Never returns a point worse than `previous`.
CovParams update_nonhomog_ri(const InterceptStats& stats, const CovParams& previous,
                             std::vector<std::string>* notes = nullptr);

/// sigma_j^2 = sum p_ik(j) (y_ik - f_j(x_i))^2 / sum p_ik(j). States with
/// total weight below 1e-12 keep their previous value (noted).
Vector update_state_diag(const Dataset& data, const std::vector<Matrix>& marginal, const Matrix& F,
                         const Vector& previous, std::vector<std::string>* notes = nullptr);

/// Pooled version with denominator N n.
double update_iso(const Dataset& data, const std::vector<Matrix>& marginal, const Matrix& F);

}  // namespace snr

#endif  // SNR_COVARIANCE_HPP
