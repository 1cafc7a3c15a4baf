#ifndef SNR_CV_HPP
#define SNR_CV_HPP

// Leave-one-replicate-out cross-validation of the smoothing parameters for
// the diagonal covariance kinds.

#include "snr/em.hpp"

#include <vector>

namespace snr {

struct CvConfig {
  std::vector<double> grid;  // empty: default_cv_grid()
  int outer_max_iter = 20;
  double outer_tol = 1e-3;   // relative change in every lambda_j
};

/// 25 log-spaced values from 1e-6 to 1e2.
std::vector<double> default_cv_grid();

struct CvScore {
  double value = 0;
  int direct_fallbacks = 0;  // replicates scored by literal refitting
};

/// CV_j(lambda) for one state from the frozen weights: `weights` is N x n
/// with row k the diagonal of W_kj. Uses
///   sum_k [(I - H_k)^{-1}(f - y_k)]' W_k [(I - H_k)^{-1}(f - y_k)],
/// refitting replicate k directly when I - H_k is numerically singular
/// (reciprocal condition below 1e-8).
CvScore cv_score(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                 double lambda);

/// The same criterion by refitting without each replicate.
double cv_score_direct(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                       double lambda);

/// Fitted values of the penalised fit that leaves replicate k out. When the
/// other replicates do not determine it, the maximiser closest to y_k in the
/// W_k norm is used.
Vector leave_one_out_fit(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                         double lambda, Index k);

/// Fitted values of the penalised fit using every replicate.
Vector full_fit(const Matrix& B, const Matrix& R, const Matrix& weights, const Matrix& y,
                double lambda);

struct CvIteration {
  Vector lambdas_in;   // lambdas used for the ECM fit
  Matrix scores;       // J x grid
  Vector lambdas_out;  // per-state minimisers
};

struct CvResult {
  std::vector<double> grid;
  std::vector<CvIteration> iterations;
  Vector lambdas;
  bool stabilized = false;
  int direct_fallbacks = 0;
  FitReport fit;  // final ECM fit at the selected lambdas
};

/// Outer loop: ECM fit at the current lambdas, freeze W_kj from its
/// posteriors and variances, minimise CV_j over the grid for every state,
/// repeat until no lambda moves (relative outer_tol) or outer_max_iter.
CvResult select_lambdas(const Dataset& data, const ModelSpec& spec, const FitConfig& config,
                        const CvConfig& cv);

}  // namespace snr

#endif  // SNR_CV_HPP
