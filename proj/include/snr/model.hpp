#ifndef SNR_MODEL_HPP
#define SNR_MODEL_HPP

// Shared dataset, specification, parameter and result types.

#include "snr/basis.hpp"
#include "snr/core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace snr {

/// Responses y (N x n, replicate k in row k) on a grid x shared by all
/// replicates, plus optional per-point covariates (one N x n matrix each).
struct Dataset {
  Vector x;
  Matrix y;
  std::vector<Matrix> covariates;

  Index replicates() const { return y.rows(); }
  Index points() const { return y.cols(); }
  Index covariate_count() const { return static_cast<Index>(covariates.size()); }

  /// n x (M+1) logistic design for replicate k: a leading 1, then v_{ik}.
  Matrix design(Index k) const;
};

enum class LatentKind { Iid, Markov, Covariate };
enum class CovKind { IsoDiag, StateDiag, Unrestricted, HomogRI, NonhomogRI };

std::string_view to_string(LatentKind kind);
std::string_view to_string(CovKind kind);
LatentKind parse_latent_kind(std::string_view name);
CovKind parse_cov_kind(std::string_view name);

inline bool is_diagonal(CovKind kind) {
  return kind == CovKind::IsoDiag || kind == CovKind::StateDiag;
}

/// Kinds whose E-step needs the full sum over state vectors.
inline bool needs_enumeration(CovKind kind) { return !is_diagonal(kind); }

struct LatentSpec {
  LatentKind kind = LatentKind::Iid;
  int states = 2;
};

/// Parameters of the hidden-state law. Only the members for `kind` are used.
/// States are 0-based internally; state 0 is the logistic reference category.
struct LatentParams {
  LatentKind kind = LatentKind::Iid;
  Vector p;      // Iid: J probabilities
  Vector pi;     // Markov: initial probabilities
  Matrix A;      // Markov: A(l, j) = P(z_i = j | z_{i-1} = l)
  Matrix beta;   // Covariate: (J-1) x (M+1), row j-1 holds beta_j

  int states() const;
};

struct CovSpec {
  CovKind kind = CovKind::IsoDiag;
};

/// Residual covariance parameters. tau^2 = d * sigma2 for the random
/// intercept kinds.
struct CovParams {
  CovKind kind = CovKind::IsoDiag;
  double sigma2 = 1.0;   // IsoDiag, HomogRI, NonhomogRI
  Vector state_sigma2;   // StateDiag
  Matrix V;              // Unrestricted
  double d = 0.0;        // HomogRI
  double d1 = 0.0;       // NonhomogRI, common intercept
  double d2 = 0.0;       // NonhomogRI, state-2 intercept
};

struct Theta {
  Matrix phi;  // J x K; row j holds the coefficients of f_j
  LatentParams alpha;
  CovParams cov;
  Vector lambdas;

  int states() const { return static_cast<int>(phi.rows()); }
};

/// Posterior tables. joint is N x J^n in canonical order (see StateSpace);
/// marginal[j] is N x n; pairwise[l * J + j] is N x (n-1) with entry (k, i)
/// equal to P(z_{ik} = l, z_{i+1,k} = j | y_k).
struct PosteriorTables {
  Matrix joint;
  std::vector<Matrix> marginal;
  std::vector<Matrix> pairwise;
  Vector loglik;  // log p(y_k | theta) per replicate

  bool has_joint() const { return joint.size() > 0; }
};

/// Louis observed information over the free coordinates of alpha.
struct InformationMatrix {
  std::vector<std::string> names;
  Vector estimates;
  Matrix information;
  Matrix covariance;
  Vector se;
};

struct FitReport {
  SplineBasis basis;
  Theta theta;
  PosteriorTables posteriors;
  std::vector<double> trace;
  std::optional<InformationMatrix> std_errors;
  std::string std_errors_note;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> notes;

  /// n x J matrix of fitted f_j on grid x.
  Matrix curves(const Vector& x) const;
};

// -- validation ---------------------------------------------------------------

struct Violation {
  ErrorCode code;
  std::string message;
};

inline constexpr std::uint64_t kDefaultEnumerationCap = std::uint64_t{1} << 20;

/// J^n, saturating at UINT64_MAX.
std::uint64_t state_vector_count(int J, Index n);

/// All problems with a (dataset, latent, covariance) combination. An empty
/// result means the configuration is usable.
std::vector<Violation> check(const Dataset& data, const LatentSpec& latent, const CovSpec& cov,
                             std::uint64_t enumeration_cap = kDefaultEnumerationCap,
                             bool wants_std_errors = false);

/// Throws the first violation from check(), with every message attached.
void validate(const Dataset& data, const LatentSpec& latent, const CovSpec& cov,
              std::uint64_t enumeration_cap = kDefaultEnumerationCap,
              bool wants_std_errors = false);

void validate_dataset(const Dataset& data);
void validate_params(const LatentParams& alpha, int J, Index covariate_count);
void validate_params(const CovParams& cov, int J, Index n);

// -- label permutations -------------------------------------------------------

/// Relabels states so that new state j is old state perm[j]. Applies to
/// phi, alpha, state-specific covariance parameters, lambdas and posteriors.
/// Standard errors are remapped for J = 2 and dropped otherwise.
FitReport permute_states(const FitReport& fit, const std::vector<int>& perm);
LatentParams permute_states(const LatentParams& alpha, const std::vector<int>& perm);

}  // namespace snr

#endif  // SNR_MODEL_HPP
