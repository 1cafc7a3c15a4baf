#include "snr/covariance.hpp"

#include "snr/nelder_mead.hpp"

#include <algorithm>
#include <sstream>

namespace snr {

// -- StateSpace ---------------------------------------------------------------

StateSpace::StateSpace(int states, Index points) : states_(states), points_(points), size_(1) {
  if (states < 1 || states > 255) throw Error(ErrorCode::SpecMismatch, "J must lie in [1, 255]");
  const auto count = state_vector_count(states, points);
  if (count > (std::uint64_t{1} << 32))
    throw Error(ErrorCode::EnumerationTooLarge, "state space too large to enumerate");
  size_ = static_cast<Index>(count);
  table_.resize(static_cast<std::size_t>(size_ * points_));
  for (Index idx = 0; idx < size_; ++idx) {
    Index rest = idx;
    for (Index i = 0; i < points_; ++i) {
      table_[idx * points_ + i] = static_cast<std::uint8_t>(rest % states_);
      rest /= states_;
    }
  }
}

Index StateSpace::index_of(StateView s) const {
  Index idx = 0, scale = 1;
  for (auto v : s) {
    idx += v * scale;
    scale *= states_;
  }
  return idx;
}

std::vector<int> StateSpace::counts(StateView s, int J) {
  std::vector<int> out(J, 0);
  for (auto v : s) ++out[v];
  return out;
}

std::vector<int> StateSpace::transitions(StateView s, int J) {
  std::vector<int> out(J * J, 0);
  for (std::size_t i = 1; i < s.size(); ++i) ++out[s[i - 1] * J + s[i]];
  return out;
}

// -- CovStructure -------------------------------------------------------------

InterceptTerms intercept_terms(double d1, double d2, Index n, Index m) {
  const double nd = static_cast<double>(n), md = static_cast<double>(m);
  const double det = (1 + nd * d1) * (1 + md * d2) - md * md * d1 * d2;
  InterceptTerms t;
  t.m11 = d1 * (1 + md * d2) / det;
  t.m12 = -md * d1 * d2 / det;
  t.m22 = d2 * (1 + nd * d1) / det;
  t.logdet = std::log(det);
  return t;
}

CovStructure::CovStructure(CovParams params, Index n) : params_(std::move(params)), n_(n) {
  switch (params_.kind) {
    case CovKind::Unrestricted: {
      llt_.compute(params_.V);
      if (llt_.info() != Eigen::Success)
        throw Error(ErrorCode::NotSPD, "unrestricted covariance is not positive definite");
      v_inverse_ = llt_.solve(Matrix::Identity(n, n));
      unrestricted_logdet_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
      break;
    }
    case CovKind::HomogRI:
      terms_.assign(n + 1, intercept_terms(params_.d, 0.0, n, 0));
      break;
    case CovKind::NonhomogRI:
      terms_.resize(n + 1);
      for (Index m = 0; m <= n; ++m) terms_[m] = intercept_terms(params_.d1, params_.d2, n, m);
      break;
    default:
      break;
  }
}

namespace {

Index count_state2(StateView s) {
  Index m = 0;
  for (auto v : s) m += (v == 1);
  return m;
}

}  // namespace

double CovStructure::log_density(const Eigen::Ref<const Vector>& r, StateView s) const {
  const double n = static_cast<double>(n_);
  switch (params_.kind) {
    case CovKind::IsoDiag:
      return -0.5 * (n * (kLog2Pi + std::log(params_.sigma2)) + r.squaredNorm() / params_.sigma2);
    case CovKind::StateDiag: {
      double acc = 0;
      for (Index i = 0; i < n_; ++i) {
        const double v = params_.state_sigma2[s[i]];
        acc += std::log(v) + r[i] * r[i] / v;
      }
      return -0.5 * (n * kLog2Pi + acc);
    }
    case CovKind::Unrestricted: {
      const Vector z = llt_.matrixL().solve(r);
      return -0.5 * (n * kLog2Pi + unrestricted_logdet_ + z.squaredNorm());
    }
    case CovKind::HomogRI:
    case CovKind::NonhomogRI: {
      double rr = 0, c1 = 0, c2 = 0;
      Index m = 0;
      for (Index i = 0; i < n_; ++i) {
        rr += r[i] * r[i];
        c1 += r[i];
        if (s[i] == 1) {
          c2 += r[i];
          ++m;
        }
      }
      const auto& t = terms_[params_.kind == CovKind::HomogRI ? 0 : m];
      const double quad = (rr - (t.m11 * c1 * c1 + 2 * t.m12 * c1 * c2 + t.m22 * c2 * c2)) /
                          params_.sigma2;
      return -0.5 * (n * kLog2Pi + n * std::log(params_.sigma2) + t.logdet + quad);
    }
  }
  return kNegInf;
}

double CovStructure::log_det(StateView s) const {
  const double n = static_cast<double>(n_);
  switch (params_.kind) {
    case CovKind::IsoDiag: return n * std::log(params_.sigma2);
    case CovKind::StateDiag: {
      double acc = 0;
      for (auto v : s) acc += std::log(params_.state_sigma2[v]);
      return acc;
    }
    case CovKind::Unrestricted: return unrestricted_logdet_;
    case CovKind::HomogRI: return n * std::log(params_.sigma2) + terms_[0].logdet;
    case CovKind::NonhomogRI:
      return n * std::log(params_.sigma2) + terms_[count_state2(s)].logdet;
  }
  return 0;
}

Matrix CovStructure::dense(StateView s) const {
  switch (params_.kind) {
    case CovKind::IsoDiag: return params_.sigma2 * Matrix::Identity(n_, n_);
    case CovKind::StateDiag: {
      Vector diag(n_);
      for (Index i = 0; i < n_; ++i) diag[i] = params_.state_sigma2[s[i]];
      return diag.asDiagonal();
    }
    case CovKind::Unrestricted: return params_.V;
    case CovKind::HomogRI:
      return params_.sigma2 * (Matrix::Identity(n_, n_) + params_.d * Matrix::Ones(n_, n_));
    case CovKind::NonhomogRI: {
      Vector u(n_);
      for (Index i = 0; i < n_; ++i) u[i] = s[i] == 1 ? 1.0 : 0.0;
      return params_.sigma2 * (Matrix::Identity(n_, n_) + params_.d1 * Matrix::Ones(n_, n_) +
                               params_.d2 * u * u.transpose());
    }
  }
  return {};
}

Matrix CovStructure::inverse(StateView s) const {
  switch (params_.kind) {
    case CovKind::IsoDiag: return Matrix::Identity(n_, n_) / params_.sigma2;
    case CovKind::StateDiag: {
      Vector diag(n_);
      for (Index i = 0; i < n_; ++i) diag[i] = 1.0 / params_.state_sigma2[s[i]];
      return diag.asDiagonal();
    }
    case CovKind::Unrestricted: return v_inverse_;
    case CovKind::HomogRI:
    case CovKind::NonhomogRI: {
      const auto& t = terms_[params_.kind == CovKind::HomogRI ? 0 : count_state2(s)];
      Matrix out(n_, n_);
      for (Index i = 0; i < n_; ++i) {
        const double ui = s[i] == 1 ? 1.0 : 0.0;
        for (Index j = 0; j < n_; ++j) {
          const double uj = s[j] == 1 ? 1.0 : 0.0;
          const double low = t.m11 + t.m12 * (ui + uj) + t.m22 * ui * uj;
          out(i, j) = ((i == j ? 1.0 : 0.0) - low) / params_.sigma2;
        }
      }
      return out;
    }
  }
  return {};
}

double log_mvn_density(const Vector& y, const Vector& mean, const CovStructure& cov, StateView s) {
  return cov.log_density(y - mean, s);
}

// -- random intercept statistics ---------------------------------------------

double InterceptStats::total_c1_squared() const {
  double acc = 0;
  for (const auto& c : cc) acc += c(0, 0);
  return acc;
}

InterceptStats intercept_stats(const Dataset& data, const Matrix& joint, const StateSpace& space,
                               const Matrix& F) {
  const Index N = data.replicates(), n = data.points(), S = space.size();
  InterceptStats st;
  st.replicates = N;
  st.points = n;
  st.weight = Vector::Zero(n + 1);
  st.rr = Vector::Zero(n + 1);
  st.cc.assign(n + 1, Eigen::Matrix2d::Zero());
  for (Index k = 0; k < N; ++k) {
    for (Index idx = 0; idx < S; ++idx) {
      const double p = joint(k, idx);
      if (p == 0.0) continue;
      const StateView s = space[idx];
      double rr = 0, c1 = 0, c2 = 0;
      Index m = 0;
      for (Index i = 0; i < n; ++i) {
        const double r = data.y(k, i) - F(i, s[i]);
        rr += r * r;
        c1 += r;
        if (s[i] == 1) {
          c2 += r;
          ++m;
        }
      }
      st.weight[m] += p;
      st.rr[m] += p * rr;
      st.cc[m](0, 0) += p * c1 * c1;
      st.cc[m](0, 1) += p * c1 * c2;
      st.cc[m](1, 1) += p * c2 * c2;
    }
  }
  for (auto& c : st.cc) c(1, 0) = c(0, 1);
  return st;
}

double expected_gaussian_term(const InterceptStats& st, const CovParams& cov) {
  const Index n = st.points;
  const double nd = static_cast<double>(n);
  double acc = 0;
  for (Index m = 0; m <= n; ++m) {
    if (st.weight[m] == 0.0) continue;
    const InterceptTerms t = cov.kind == CovKind::HomogRI ? intercept_terms(cov.d, 0.0, n, 0)
                                                          : intercept_terms(cov.d1, cov.d2, n, m);
    const auto& c = st.cc[m];
    const double quad = st.rr[m] - (t.m11 * c(0, 0) + 2 * t.m12 * c(0, 1) + t.m22 * c(1, 1));
    acc += quad / cov.sigma2 + st.weight[m] * (nd * std::log(cov.sigma2) + t.logdet);
  }
  return -0.5 * acc;
}

double expected_gaussian_term(const Dataset& data, const Matrix& joint, const StateSpace& space,
                              const Matrix& F, const CovStructure& cov) {
  const Index N = data.replicates(), n = data.points();
  const double nd = static_cast<double>(n);
  double acc = 0;
  Vector r(n);
  for (Index k = 0; k < N; ++k) {
    for (Index idx = 0; idx < space.size(); ++idx) {
      const double p = joint(k, idx);
      if (p == 0.0) continue;
      const StateView s = space[idx];
      for (Index i = 0; i < n; ++i) r[i] = data.y(k, i) - F(i, s[i]);
      // log N = -1/2 (n log 2pi + log|V| + r'V^{-1}r)
      acc += p * (-2.0 * cov.log_density(r, s) - nd * kLog2Pi);
    }
  }
  return -0.5 * acc;
}

// -- updates ------------------------------------------------------------------

Matrix update_unrestricted(const Dataset& data, const Matrix& joint, const StateSpace& space,
                           const Matrix& F, std::vector<std::string>* notes) {
  const Index N = data.replicates(), n = data.points();
  Matrix V = Matrix::Zero(n, n);
  Vector r(n);
  for (Index k = 0; k < N; ++k) {
    for (Index idx = 0; idx < space.size(); ++idx) {
      const double p = joint(k, idx);
      if (p == 0.0) continue;
      const StateView s = space[idx];
      for (Index i = 0; i < n; ++i) r[i] = data.y(k, i) - F(i, s[i]);
      V.selfadjointView<Eigen::Lower>().rankUpdate(r, p);
    }
  }
  V = V.selfadjointView<Eigen::Lower>();
  V /= static_cast<double>(N);

  Eigen::LLT<Matrix> llt(V);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    const double ridge = 1e-10 * V.trace() / static_cast<double>(n);
    V.diagonal().array() += ridge;
    if (notes) {
      std::ostringstream msg;
      msg << "unrestricted V singular; ridge " << ridge << " added";
      notes->push_back(msg.str());
    }
  }
  return V;
}

CovParams update_homog_ri(const InterceptStats& st, std::vector<std::string>* notes) {
  const double N = static_cast<double>(st.replicates), n = static_cast<double>(st.points);
  const double A = st.total_rr(), C = st.total_c1_squared();
  CovParams out;
  out.kind = CovKind::HomogRI;
  out.sigma2 = (A - C / n) / (N * (n - 1));
  if (!(out.sigma2 > 0))
    throw Error(ErrorCode::NonPositiveSigma, "random intercept update produced sigma^2 <= 0");
  out.d = C / (out.sigma2 * N * n * n) - 1.0 / n;
  if (out.d < 0) {
    // Boundary d = 0: V = sigma^2 I, maximised by the pooled mean square.
    out.d = 0;
    out.sigma2 = A / (N * n);
    if (notes) notes->push_back("negative random intercept variance clamped to 0");
  }
  return out;
}

CovParams update_homog_ri(const Dataset& data, const Matrix& joint, const StateSpace& space,
                          const Matrix& F, std::vector<std::string>* notes) {
  return update_homog_ri(intercept_stats(data, joint, space, F), notes);
}

CovParams update_nonhomog_ri(const InterceptStats& st, const CovParams& previous,
                             std::vector<std::string>* notes) {
  constexpr double kLogFloor = -27.631021115928547;  // log(1e-12)
  constexpr double kLogCeil = 27.631021115928547;
  auto params_at = [&](const Eigen::Vector3d& z) {
    CovParams c;
    c.kind = CovKind::NonhomogRI;
    c.sigma2 = std::exp(std::clamp(z[0], -700.0, 700.0));
    c.d1 = std::exp(std::clamp(z[1], kLogFloor, kLogCeil));
    c.d2 = std::exp(std::clamp(z[2], kLogFloor, kLogCeil));
    return c;
  };
  auto objective = [&](const Eigen::Vector3d& z) {
    return -expected_gaussian_term(st, params_at(z));
  };

  Eigen::Vector3d start(std::log(previous.sigma2), std::log(std::max(previous.d1, 1e-12)),
                        std::log(std::max(previous.d2, 1e-12)));
  NelderMeadOptions opts;
  opts.max_evaluations = 400;
  opts.spread_tolerance = 1e-10;
  opts.initial_step = 0.5;
  const auto res = nelder_mead<3>(objective, start, opts);

  CovParams best = params_at(res.point);
  // sigma^2 has a closed-form conditional maximiser given (d1, d2).
  {
    const double n = static_cast<double>(st.points), N = static_cast<double>(st.replicates);
    double quad = 0;
    for (Index m = 0; m <= st.points; ++m) {
      if (st.weight[m] == 0.0) continue;
      const auto t = intercept_terms(best.d1, best.d2, st.points, m);
      const auto& c = st.cc[m];
      quad += st.rr[m] - (t.m11 * c(0, 0) + 2 * t.m12 * c(0, 1) + t.m22 * c(1, 1));
    }
    const double s2 = quad / (N * n);
    if (s2 > 0) {
      CovParams refined = best;
      refined.sigma2 = s2;
      if (expected_gaussian_term(st, refined) >= expected_gaussian_term(st, best)) best = refined;
    }
  }
  if (!res.converged && notes) notes->push_back("NONHOMOG_RI optimizer stalled; best point kept");

  CovParams prev = previous;
  prev.kind = CovKind::NonhomogRI;
  if (expected_gaussian_term(st, best) < expected_gaussian_term(st, prev)) return prev;
  return best;
}

Vector update_state_diag(const Dataset& data, const std::vector<Matrix>& marginal, const Matrix& F,
                         const Vector& previous, std::vector<std::string>* notes) {
  const Index J = static_cast<Index>(marginal.size());
  Vector out(J);
  for (Index j = 0; j < J; ++j) {
    const Matrix resid = data.y.rowwise() - F.col(j).transpose();
    const double weight = marginal[j].sum();
    if (weight < 1e-12) {
      out[j] = previous[j];
      if (notes) notes->push_back("state " + std::to_string(j + 1) + " has no posterior mass; variance kept");
      continue;
    }
    out[j] = (marginal[j].array() * resid.array().square()).sum() / weight;
  }
  return out;
}

double update_iso(const Dataset& data, const std::vector<Matrix>& marginal, const Matrix& F) {
  double acc = 0;
  for (std::size_t j = 0; j < marginal.size(); ++j) {
    const Matrix resid = data.y.rowwise() - F.col(static_cast<Index>(j)).transpose();
    acc += (marginal[j].array() * resid.array().square()).sum();
  }
  return acc / static_cast<double>(data.y.size());
}

}  // namespace snr
