#include "snr/model.hpp"

#include <algorithm>
#include <numeric>

namespace snr {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::GridTooSmall: return "GridTooSmall";
    case ErrorCode::BadK: return "BadK";
    case ErrorCode::NonIncreasingGrid: return "NonIncreasingGrid";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::EnumerationTooLarge: return "EnumerationTooLarge";
    case ErrorCode::SpecMismatch: return "SpecMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::DegenerateLikelihood: return "DegenerateLikelihood";
    case ErrorCode::NotSPD: return "NotSPD";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::BoundaryParameter: return "BoundaryParameter";
    case ErrorCode::MonotonicityViolation: return "MonotonicityViolation";
    case ErrorCode::BadInit: return "BadInit";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::XInconsistent: return "XInconsistent";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

std::string_view to_string(LatentKind kind) {
  switch (kind) {
    case LatentKind::Iid: return "IID";
    case LatentKind::Markov: return "MARKOV";
    case LatentKind::Covariate: return "COVARIATE";
  }
  return "?";
}

std::string_view to_string(CovKind kind) {
  switch (kind) {
    case CovKind::IsoDiag: return "ISO_DIAG";
    case CovKind::StateDiag: return "STATE_DIAG";
    case CovKind::Unrestricted: return "UNRESTRICTED";
    case CovKind::HomogRI: return "HOMOG_RI";
    case CovKind::NonhomogRI: return "NONHOMOG_RI";
  }
  return "?";
}

LatentKind parse_latent_kind(std::string_view name) {
  for (auto kind : {LatentKind::Iid, LatentKind::Markov, LatentKind::Covariate})
    if (name == to_string(kind)) return kind;
  throw Error(ErrorCode::ParseError, "unknown latent kind '" + std::string(name) + "'");
}

CovKind parse_cov_kind(std::string_view name) {
  for (auto kind : {CovKind::IsoDiag, CovKind::StateDiag, CovKind::Unrestricted,
                    CovKind::HomogRI, CovKind::NonhomogRI})
    if (name == to_string(kind)) return kind;
  throw Error(ErrorCode::ParseError, "unknown covariance kind '" + std::string(name) + "'");
}

Matrix Dataset::design(Index k) const {
  Matrix out(points(), covariate_count() + 1);
  out.col(0).setOnes();
  for (Index m = 0; m < covariate_count(); ++m) out.col(m + 1) = covariates[m].row(k).transpose();
  return out;
}

int LatentParams::states() const {
  switch (kind) {
    case LatentKind::Iid: return static_cast<int>(p.size());
    case LatentKind::Markov: return static_cast<int>(pi.size());
    case LatentKind::Covariate: return static_cast<int>(beta.rows()) + 1;
  }
  return 0;
}

Matrix FitReport::curves(const Vector& x) const {
  return basis_matrix(basis, x) * theta.phi.transpose();
}

std::uint64_t state_vector_count(int J, Index n) {
  std::uint64_t count = 1;
  for (Index i = 0; i < n; ++i) {
    if (count > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(J))
      return std::numeric_limits<std::uint64_t>::max();
    count *= static_cast<std::uint64_t>(J);
  }
  return count;
}

namespace {

void add(std::vector<Violation>& out, ErrorCode code, std::string message) {
  out.push_back({code, std::move(message)});
}

}  // namespace

void validate_dataset(const Dataset& data) {
  const Index n = data.points();
  if (data.replicates() < 1) throw Error(ErrorCode::SpecMismatch, "dataset has no replicates");
  if (n < 4) throw Error(ErrorCode::GridTooSmall, "grid needs at least 4 points");
  if (data.x.size() != n) throw Error(ErrorCode::SpecMismatch, "x length differs from y columns");
  for (Index i = 1; i < n; ++i)
    if (!(data.x[i] > data.x[i - 1]))
      throw Error(ErrorCode::NonIncreasingGrid, "grid must be strictly increasing");
  if (!data.y.allFinite() || !data.x.allFinite())
    throw Error(ErrorCode::SpecMismatch, "dataset contains missing or non-finite values");
  for (const auto& v : data.covariates) {
    if (v.rows() != data.replicates() || v.cols() != n)
      throw Error(ErrorCode::SpecMismatch, "covariate array dimensions do not match (N, n)");
    if (!v.allFinite()) throw Error(ErrorCode::SpecMismatch, "covariates contain missing values");
  }
}

std::vector<Violation> check(const Dataset& data, const LatentSpec& latent, const CovSpec& cov,
                             std::uint64_t enumeration_cap, bool wants_std_errors) {
  std::vector<Violation> out;
  try {
    validate_dataset(data);
  } catch (const Error& e) {
    add(out, e.code(), e.what());
  }
  if (latent.states < 1) add(out, ErrorCode::SpecMismatch, "J must be at least 1");
  if (latent.kind == LatentKind::Covariate && data.covariate_count() == 0)
    add(out, ErrorCode::SpecMismatch, "COVARIATE latent model requires covariates in the dataset");
  if (cov.kind == CovKind::NonhomogRI && latent.states != 2)
    add(out, ErrorCode::SpecMismatch, "NONHOMOG_RI is defined for J = 2 only");
  if (wants_std_errors && latent.kind != LatentKind::Iid && latent.states != 2)
    add(out, ErrorCode::SpecMismatch,
        "standard errors for MARKOV and COVARIATE states require J = 2");

  const bool enumerate = needs_enumeration(cov.kind) || wants_std_errors;
  if (enumerate && latent.states >= 1) {
    const auto count = state_vector_count(latent.states, data.points());
    if (count > enumeration_cap)
      add(out, ErrorCode::EnumerationTooLarge,
          "J^n = " + std::to_string(latent.states) + "^" + std::to_string(data.points()) +
              " state vectors exceeds enumeration cap " + std::to_string(enumeration_cap) +
              "; a cap of at least " +
              (count == std::numeric_limits<std::uint64_t>::max() ? std::string("2^64")
                                                                  : std::to_string(count)) +
              " is required");
  }
  return out;
}

void validate(const Dataset& data, const LatentSpec& latent, const CovSpec& cov,
              std::uint64_t enumeration_cap, bool wants_std_errors) {
  const auto problems = check(data, latent, cov, enumeration_cap, wants_std_errors);
  if (problems.empty()) return;
  std::string message;
  for (const auto& v : problems) {
    if (!message.empty()) message += "; ";
    message += std::string(to_string(v.code)) + ": " + v.message;
  }
  throw Error(problems.front().code, message);
}

namespace {

bool is_simplex(const Vector& p) {
  return p.size() > 0 && (p.array() >= 0.0).all() && (p.array() <= 1.0).all() &&
         std::abs(p.sum() - 1.0) <= 1e-10;
}

}  // namespace

void validate_params(const LatentParams& alpha, int J, Index covariate_count) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidParams, m); };
  switch (alpha.kind) {
    case LatentKind::Iid:
      if (alpha.p.size() != J || !is_simplex(alpha.p)) bad("p must be a probability vector of length J");
      break;
    case LatentKind::Markov:
      if (alpha.pi.size() != J || !is_simplex(alpha.pi)) bad("pi must be a probability vector of length J");
      if (alpha.A.rows() != J || alpha.A.cols() != J) bad("A must be J x J");
      for (Index l = 0; l < J; ++l)
        if (!is_simplex(alpha.A.row(l).transpose())) bad("rows of A must be probability vectors");
      break;
    case LatentKind::Covariate:
      if (alpha.beta.rows() != J - 1 || alpha.beta.cols() != covariate_count + 1)
        bad("beta must be (J-1) x (M+1)");
      if (!alpha.beta.allFinite()) bad("beta must be finite");
      break;
  }
}

void validate_params(const CovParams& cov, int J, Index n) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidParams, m); };
  switch (cov.kind) {
    case CovKind::IsoDiag:
      if (!(cov.sigma2 > 0)) bad("sigma2 must be positive");
      break;
    case CovKind::StateDiag:
      if (cov.state_sigma2.size() != J || !(cov.state_sigma2.array() > 0).all())
        bad("state variances must be J positive values");
      break;
    case CovKind::Unrestricted: {
      if (cov.V.rows() != n || cov.V.cols() != n) bad("V must be n x n");
      if (!cov.V.isApprox(cov.V.transpose(), 1e-12)) bad("V must be symmetric");
      Eigen::LLT<Matrix> llt(cov.V);
      if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotSPD, "V is not positive definite");
      break;
    }
    case CovKind::HomogRI:
      if (!(cov.sigma2 > 0) || !(cov.d >= 0)) bad("need sigma2 > 0 and d >= 0");
      break;
    case CovKind::NonhomogRI:
      if (J != 2) throw Error(ErrorCode::SpecMismatch, "NONHOMOG_RI is defined for J = 2 only");
      if (!(cov.sigma2 > 0) || !(cov.d1 >= 0) || !(cov.d2 >= 0))
        bad("need sigma2 > 0, d1 >= 0 and d2 >= 0");
      break;
  }
}

// -- permutations -------------------------------------------------------------

namespace {

void check_perm(const std::vector<int>& perm, int J) {
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> ident(J);
  std::iota(ident.begin(), ident.end(), 0);
  if (sorted != ident) throw Error(ErrorCode::InvalidParams, "not a permutation of the states");
}

bool is_identity(const std::vector<int>& perm) {
  for (std::size_t j = 0; j < perm.size(); ++j)
    if (perm[j] != static_cast<int>(j)) return false;
  return true;
}

}  // namespace

LatentParams permute_states(const LatentParams& alpha, const std::vector<int>& perm) {
  const int J = alpha.states();
  check_perm(perm, J);
  LatentParams out = alpha;
  switch (alpha.kind) {
    case LatentKind::Iid:
      for (int j = 0; j < J; ++j) out.p[j] = alpha.p[perm[j]];
      break;
    case LatentKind::Markov:
      for (int j = 0; j < J; ++j) {
        out.pi[j] = alpha.pi[perm[j]];
        for (int l = 0; l < J; ++l) out.A(j, l) = alpha.A(perm[j], perm[l]);
      }
      break;
    case LatentKind::Covariate: {
      // eta_j = beta_j' v with eta_0 = 0; new eta_j = eta_perm[j] - eta_perm[0].
      const Index P = alpha.beta.cols();
      Matrix full = Matrix::Zero(J, P);
      full.bottomRows(J - 1) = alpha.beta;
      for (int j = 1; j < J; ++j) out.beta.row(j - 1) = full.row(perm[j]) - full.row(perm[0]);
      break;
    }
  }
  return out;
}

FitReport permute_states(const FitReport& fit, const std::vector<int>& perm) {
  const int J = fit.theta.states();
  check_perm(perm, J);
  if (is_identity(perm)) return fit;
  if (fit.theta.cov.kind == CovKind::NonhomogRI)
    throw Error(ErrorCode::Unsupported, "NONHOMOG_RI is not closed under relabelling");

  FitReport out = fit;
  for (int j = 0; j < J; ++j) {
    out.theta.phi.row(j) = fit.theta.phi.row(perm[j]);
    if (fit.theta.lambdas.size() == J) out.theta.lambdas[j] = fit.theta.lambdas[perm[j]];
    if (fit.theta.cov.kind == CovKind::StateDiag)
      out.theta.cov.state_sigma2[j] = fit.theta.cov.state_sigma2[perm[j]];
  }
  out.theta.alpha = permute_states(fit.theta.alpha, perm);

  auto& post = out.posteriors;
  if (!fit.posteriors.marginal.empty())
    for (int j = 0; j < J; ++j) post.marginal[j] = fit.posteriors.marginal[perm[j]];
  if (!fit.posteriors.pairwise.empty())
    for (int l = 0; l < J; ++l)
      for (int j = 0; j < J; ++j)
        post.pairwise[l * J + j] = fit.posteriors.pairwise[perm[l] * J + perm[j]];
  if (fit.posteriors.has_joint()) {
    // Canonical index: sum_i s_i J^i with state 0 fastest.
    const Index S = fit.posteriors.joint.cols();
    Index n = 0;
    for (Index c = 1; c < S; c *= J) ++n;
    std::vector<int> inverse(J);
    for (int j = 0; j < J; ++j) inverse[perm[j]] = j;
    for (Index idx = 0; idx < S; ++idx) {
      Index rest = idx, mapped = 0, scale = 1;
      for (Index i = 0; i < n; ++i) {
        mapped += inverse[rest % J] * scale;
        rest /= J;
        scale *= J;
      }
      post.joint.col(mapped) = fit.posteriors.joint.col(idx);
    }
  }

  if (fit.std_errors) {
    if (J == 2) {
      auto& se = *out.std_errors;
      if (fit.theta.alpha.kind == LatentKind::Iid) {
        se.estimates[0] = out.theta.alpha.p[0];
      } else if (fit.theta.alpha.kind == LatentKind::Markov) {
        // (pi1, a12, a21) -> (1 - pi1, a21, a12); Jacobian diag(-1) on pi1.
        Eigen::Matrix3d T;
        T << -1, 0, 0, 0, 0, 1, 0, 1, 0;
        se.estimates << out.theta.alpha.pi[0], out.theta.alpha.A(0, 1), out.theta.alpha.A(1, 0);
        se.information = T * fit.std_errors->information * T.transpose();
        se.covariance = T * fit.std_errors->covariance * T.transpose();
        se.se = se.covariance.diagonal().cwiseSqrt();
      } else {
        se.estimates = out.theta.alpha.beta.row(0).transpose();
      }
    } else {
      out.std_errors.reset();
      out.std_errors_note = "standard errors dropped by state relabelling";
    }
  }
  return out;
}

}  // namespace snr
