#ifndef SNR_EM_HPP
#define SNR_EM_HPP

// Penalised ECM: E-step dispatch, spline coefficient updates for the general
// and diagonal covariance paths, the observed-data objective, initialisation
// and the iteration driver.

#include "snr/covariance.hpp"
#include "snr/latent.hpp"
#include "snr/model.hpp"
#include "snr/states.hpp"

#include <optional>
#include <string>
#include <vector>

namespace snr {

struct ModelSpec {
  LatentSpec latent;
  CovSpec cov;
};

enum class InitStrategy { QuantileSplit, Supplied };

/// Which E-step to run for diagonal covariances. General forces the full
/// enumeration over state vectors (and the general f update) for every kind.
enum class EStepPath { Auto, General };

struct FitConfig {
  int K = 0;                 // 0: min(n, 15)
  Vector lambdas;            // empty: 0.01 for every state
  double tol = 1e-8;         // relative objective change
  int max_iter = 500;
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;
  InitStrategy init = InitStrategy::QuantileSplit;
  std::optional<Theta> initial;  // required for Supplied
  bool std_errors = false;
  EStepPath path = EStepPath::Auto;
};

inline int default_basis_size(Index n) { return static_cast<int>(std::min<Index>(n, 15)); }

/// Everything that stays fixed during one fit: data, basis, B, R and the
/// state-vector table when the E-step enumerates.
class FitContext {
 public:
  FitContext(const Dataset& data, ModelSpec spec, SplineBasis basis, EStepPath path = EStepPath::Auto,
             std::uint64_t enumeration_cap = kDefaultEnumerationCap);

  const Dataset& data() const { return *data_; }
  const ModelSpec& spec() const { return spec_; }
  const SplineBasis& basis() const { return basis_; }
  const Matrix& B() const { return B_; }
  const Matrix& R() const { return R_; }
  int states() const { return spec_.latent.states; }
  bool enumerates() const { return space_.has_value(); }
  const StateSpace& space() const { return *space_; }

  /// n x J matrix of f_j(x_i) = (B phi_j)_i.
  Matrix fitted(const Theta& theta) const { return B_ * theta.phi.transpose(); }

  PosteriorTables posteriors(const Theta& theta) const;
  double penalty(const Theta& theta) const;

 private:
  const Dataset* data_;
  ModelSpec spec_;
  SplineBasis basis_;
  Matrix B_, R_;
  std::optional<StateSpace> space_;
};

/// Solution of (B' diag(w) B + 2 lambda R) phi = B' b, with the smoother
/// M = B (B' diag(w) B + 2 lambda R)^{-1} B' so that H_k = M diag(w_k).
struct PenalizedSolve {
  Vector phi;
  Matrix smoother;  // n x n, only when requested
};

/// `weight` holds sum_k w_ik, `weighted_y` holds sum_k w_ik y_ik. Falls back
/// to a ridge of 1e-10 trace/K (noted) when the system is numerically singular.
PenalizedSolve penalized_solve(const Matrix& B, const Matrix& R, const Vector& weight,
                               const Vector& weighted_y, double lambda, bool with_smoother = false,
                               std::vector<std::string>* notes = nullptr);

/// Maximiser over phi of
///   -1/2 sum_k sum_s p_k(s) (y_k - I_s B* phi)' V_s^{-1} (y_k - I_s B* phi)
///   - sum_j lambda_j phi_j' R phi_j.
Matrix update_f_general(const FitContext& ctx, const Matrix& joint, const CovStructure& cov,
                        const Vector& lambdas, std::vector<std::string>* notes = nullptr);

/// Per-state solve of (B' sum_k W_kj B + 2 lambda_j R) phi_j = B' sum_k W_kj y_k
/// with W_kj = sigma_j^{-2} diag(p_1k(j), ..., p_nk(j)).
Matrix update_f_diagonal(const Dataset& data, const Matrix& B, const Matrix& R,
                         const std::vector<Matrix>& marginal, const Vector& variances,
                         const Vector& lambdas, std::vector<std::string>* notes = nullptr);

/// Per-state variances sigma_j^2 of a diagonal covariance.
Vector state_variances(const CovParams& cov, int J);

/// sum_k log p(y_k | theta) - sum_j lambda_j phi_j' R phi_j.
double observed_objective(const FitContext& ctx, const Theta& theta);

/// One conditional-maximisation sweep (f, then covariance, then alpha) from
/// posteriors computed at `theta`.
Theta ecm_step(const FitContext& ctx, const Theta& theta, const PosteriorTables& post,
               std::vector<std::string>* notes = nullptr);

/// Starting values. QuantileSplit: pooled penalised fit, J residual bands
/// refined by one-dimensional k-means, per-state fits and moment estimates.
Theta initialize(const FitContext& ctx, const FitConfig& config);

/// Iterates ECM sweeps to relative objective change below config.tol or
/// config.max_iter sweeps. Throws MonotonicityViolation when the objective
/// drops by more than 1e-8 relative.
FitReport ecm_fit(const Dataset& data, const ModelSpec& spec, const FitConfig& config);

/// Same, with a prepared context and explicit start.
FitReport ecm_fit(const FitContext& ctx, const Theta& start, const FitConfig& config);

/// Appends `note` unless an identical note is already present.
void add_note(std::vector<std::string>& notes, const std::string& note);

}  // namespace snr

#endif  // SNR_EM_HPP
