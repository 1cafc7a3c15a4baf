#include "snr/em.hpp"

#include "snr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace snr {

void add_note(std::vector<std::string>& notes, const std::string& note) {
  if (std::find(notes.begin(), notes.end(), note) == notes.end()) notes.push_back(note);
}

// -- context ------------------------------------------------------------------

FitContext::FitContext(const Dataset& data, ModelSpec spec, SplineBasis basis, EStepPath path,
                       std::uint64_t enumeration_cap)
    : data_(&data), spec_(spec), basis_(std::move(basis)) {
  B_ = basis_matrix(basis_, data.x);
  R_ = penalty_matrix(basis_);
  if (path == EStepPath::General || needs_enumeration(spec_.cov.kind)) {
    const auto count = state_vector_count(spec_.latent.states, data.points());
    if (count > enumeration_cap)
      throw Error(ErrorCode::EnumerationTooLarge,
                  "J^n = " + std::to_string(count) + " state vectors exceed the enumeration cap " +
                      std::to_string(enumeration_cap));
    space_.emplace(spec_.latent.states, data.points());
  }
}

PosteriorTables FitContext::posteriors(const Theta& theta) const {
  const Matrix F = fitted(theta);
  if (space_) return joint_posterior(*data_, F, CovStructure(theta.cov, data_->points()), theta.alpha, *space_);
  if (theta.alpha.kind == LatentKind::Markov) return forward_backward(*data_, F, theta.cov, theta.alpha);
  return marginal_posterior(*data_, F, theta.cov, theta.alpha);
}

double FitContext::penalty(const Theta& theta) const {
  double acc = 0;
  for (Index j = 0; j < theta.phi.rows(); ++j)
    acc += theta.lambdas[j] * theta.phi.row(j).dot(R_ * theta.phi.row(j).transpose());
  return acc;
}

// -- f updates ----------------------------------------------------------------

namespace {

Vector solve_spd(Matrix A, const Vector& rhs, std::vector<std::string>* notes) {
  A = 0.5 * (A + A.transpose());
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-15) {
    Vector x = llt.solve(rhs);
    if (x.allFinite()) return x;
  }
  const double ridge = 1e-10 * A.trace() / static_cast<double>(A.rows());
  A.diagonal().array() += ridge;
  llt.compute(A);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::SingularSystem, "spline normal equations are singular");
  if (notes) {
    std::ostringstream msg;
    msg << "spline normal equations singular; ridge " << ridge << " added";
    add_note(*notes, msg.str());
  }
  return llt.solve(rhs);
}

}  // namespace

PenalizedSolve penalized_solve(const Matrix& B, const Matrix& R, const Vector& weight,
                               const Vector& weighted_y, double lambda, bool with_smoother,
                               std::vector<std::string>* notes) {
  Matrix A = B.transpose() * weight.asDiagonal() * B + 2.0 * lambda * R;
  PenalizedSolve out;
  if (!with_smoother) {
    out.phi = solve_spd(A, B.transpose() * weighted_y, notes);
    return out;
  }
  // Solve for [B'b | B'] together so phi and M share one factorisation.
  const Index n = B.rows();
  Matrix rhs(B.cols(), n + 1);
  rhs.col(0) = B.transpose() * weighted_y;
  rhs.rightCols(n) = B.transpose();
  A = 0.5 * (A + A.transpose());
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15)) {
    const double ridge = 1e-10 * A.trace() / static_cast<double>(A.rows());
    A.diagonal().array() += ridge;
    llt.compute(A);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::SingularSystem, "spline normal equations are singular");
    if (notes) {
      std::ostringstream msg;
      msg << "spline normal equations singular; ridge " << ridge << " added";
      add_note(*notes, msg.str());
    }
  }
  const Matrix sol = llt.solve(rhs);
  out.phi = sol.col(0);
  out.smoother = B * sol.rightCols(n);
  return out;
}

Matrix update_f_general(const FitContext& ctx, const Matrix& joint, const CovStructure& cov,
                        const Vector& lambdas, std::vector<std::string>* notes) {
  const Dataset& data = ctx.data();
  const StateSpace& space = ctx.space();
  const Index n = data.points(), S = space.size(), K = ctx.B().cols();
  const int J = ctx.states();

  const Vector w = joint.colwise().sum().transpose();
  const Matrix ybar = joint.transpose() * data.y;  // S x n, sum_k p_k(s) y_k

  // G = sum_s w_s I_s' V_s^{-1} I_s and g = sum_s I_s' V_s^{-1} ybar_s, both
  // indexed by j * n + i.
  Matrix G = Matrix::Zero(n * J, n * J);
  Vector g = Vector::Zero(n * J);
  const bool shared = cov.kind() == CovKind::IsoDiag || cov.kind() == CovKind::Unrestricted ||
                      cov.kind() == CovKind::HomogRI;
  Matrix vinv;
  if (shared) vinv = cov.inverse(space[0]);
  Vector t(n);
  std::vector<Index> pos(n);
  for (Index idx = 0; idx < S; ++idx) {
    if (w[idx] == 0.0) continue;
    const StateView s = space[idx];
    if (!shared) vinv = cov.inverse(s);
    t.noalias() = vinv * ybar.row(idx).transpose();
    for (Index i = 0; i < n; ++i) pos[i] = s[i] * n + i;
    for (Index i = 0; i < n; ++i) {
      g[pos[i]] += t[i];
      for (Index c = 0; c < n; ++c) G(pos[i], pos[c]) += w[idx] * vinv(i, c);
    }
  }

  const Matrix& B = ctx.B();
  Matrix A(J * K, J * K);
  Vector rhs(J * K);
  for (int j = 0; j < J; ++j) {
    rhs.segment(j * K, K) = B.transpose() * g.segment(j * n, n);
    for (int l = 0; l < J; ++l)
      A.block(j * K, l * K, K, K) = B.transpose() * G.block(j * n, l * n, n, n) * B;
    A.block(j * K, j * K, K, K) += 2.0 * lambdas[j] * ctx.R();
  }
  const Vector phi = solve_spd(A, rhs, notes);
  Matrix out(J, K);
  for (int j = 0; j < J; ++j) out.row(j) = phi.segment(j * K, K).transpose();
  return out;
}

Matrix update_f_diagonal(const Dataset& data, const Matrix& B, const Matrix& R,
                         const std::vector<Matrix>& marginal, const Vector& variances,
                         const Vector& lambdas, std::vector<std::string>* notes) {
  const Index J = static_cast<Index>(marginal.size());
  Matrix out(J, B.cols());
  for (Index j = 0; j < J; ++j) {
    const Vector weight = marginal[j].colwise().sum().transpose() / variances[j];
    const Vector wy = marginal[j].cwiseProduct(data.y).colwise().sum().transpose() / variances[j];
    out.row(j) = penalized_solve(B, R, weight, wy, lambdas[j], false, notes).phi.transpose();
  }
  return out;
}

Vector state_variances(const CovParams& cov, int J) {
  if (cov.kind == CovKind::StateDiag) return cov.state_sigma2;
  if (cov.kind == CovKind::IsoDiag) return Vector::Constant(J, cov.sigma2);
  throw Error(ErrorCode::SpecMismatch, "state variances need a diagonal covariance");
}

double observed_objective(const FitContext& ctx, const Theta& theta) {
  return ctx.posteriors(theta).loglik.sum() - ctx.penalty(theta);
}

// -- ECM sweep ----------------------------------------------------------------

Theta ecm_step(const FitContext& ctx, const Theta& theta, const PosteriorTables& post,
               std::vector<std::string>* notes) {
  const Dataset& data = ctx.data();
  const int J = ctx.states();
  Theta next = theta;

  if (ctx.enumerates())
    next.phi = update_f_general(ctx, post.joint, CovStructure(theta.cov, data.points()),
                                theta.lambdas, notes);
  else
    next.phi = update_f_diagonal(data, ctx.B(), ctx.R(), post.marginal, state_variances(theta.cov, J),
                                 theta.lambdas, notes);
  const Matrix F = ctx.fitted(next);

  switch (theta.cov.kind) {
    case CovKind::IsoDiag:
      next.cov.sigma2 = update_iso(data, post.marginal, F);
      break;
    case CovKind::StateDiag:
      next.cov.state_sigma2 = update_state_diag(data, post.marginal, F, theta.cov.state_sigma2, notes);
      break;
    case CovKind::Unrestricted:
      next.cov.V = update_unrestricted(data, post.joint, ctx.space(), F, notes);
      break;
    case CovKind::HomogRI:
      next.cov = update_homog_ri(intercept_stats(data, post.joint, ctx.space(), F), notes);
      break;
    case CovKind::NonhomogRI:
      next.cov = update_nonhomog_ri(intercept_stats(data, post.joint, ctx.space(), F), theta.cov, notes);
      break;
  }
  // Residuals at the rounding level of y count as zero.
  const double floor = 1e-28 * data.y.squaredNorm() / static_cast<double>(data.y.size());
  const bool degenerate = theta.cov.kind == CovKind::StateDiag
                              ? !(next.cov.state_sigma2.array() > floor).all()
                              : theta.cov.kind != CovKind::Unrestricted && !(next.cov.sigma2 > floor);
  if (degenerate) throw Error(ErrorCode::NonPositiveSigma, "residual variance estimate is zero");

  next.alpha = update_alpha(post, ctx.spec().latent, data, theta.alpha, notes).alpha;
  return next;
}

// -- initialisation -------------------------------------------------------------

namespace {

Vector resolve_lambdas(const FitConfig& config, int J) {
  if (config.lambdas.size() == 0) return Vector::Constant(J, 0.01);
  if (config.lambdas.size() == 1) return Vector::Constant(J, config.lambdas[0]);
  if (config.lambdas.size() != J)
    throw Error(ErrorCode::InvalidParams, "expected " + std::to_string(J) + " smoothing parameters");
  if ((config.lambdas.array() < 0).any() || !config.lambdas.allFinite())
    throw Error(ErrorCode::InvalidParams, "smoothing parameters must be finite and non-negative");
  return config.lambdas;
}

// One-dimensional k-means on residuals, seeded by J quantile bands. Labels
// are ordered by centre so state 0 is the lowest level.
std::vector<int> split_residuals(const Vector& r, int J) {
  const Index m = r.size();
  std::vector<int> label(m, 0);
  if (J == 1) return label;
  std::vector<Index> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return r[a] < r[b]; });
  for (Index q = 0; q < m; ++q) label[order[q]] = static_cast<int>(std::min<Index>(q * J / m, J - 1));

  Vector centre(J);
  for (int iter = 0; iter < 100; ++iter) {
    Vector sum = Vector::Zero(J), count = Vector::Zero(J);
    for (Index q = 0; q < m; ++q) {
      sum[label[q]] += r[q];
      count[label[q]] += 1;
    }
    for (int j = 0; j < J; ++j)
      if (count[j] > 0) centre[j] = sum[j] / count[j];
      else if (iter == 0) centre[j] = 0;
    bool changed = false;
    for (Index q = 0; q < m; ++q) {
      int best = 0;
      for (int j = 1; j < J; ++j)
        if (std::abs(r[q] - centre[j]) < std::abs(r[q] - centre[best])) best = j;
      if (best != label[q]) {
        label[q] = best;
        changed = true;
      }
    }
    if (!changed) break;
  }
  std::vector<int> rank(J);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return centre[a] < centre[b]; });
  std::vector<int> relabel(J);
  for (int j = 0; j < J; ++j) relabel[rank[j]] = j;
  for (auto& l : label) l = relabel[l];
  return label;
}

Vector floored(Vector p) {
  p = p.cwiseMax(0.05);
  return p / p.sum();
}

void validate_supplied(const FitContext& ctx, const Theta& theta) {
  const int J = ctx.states();
  const Index K = ctx.B().cols();
  try {
    if (theta.phi.rows() != J || theta.phi.cols() != K)
      throw Error(ErrorCode::BadInit, "phi must be " + std::to_string(J) + " x " + std::to_string(K));
    if (!theta.phi.allFinite()) throw Error(ErrorCode::BadInit, "phi must be finite");
    if (theta.alpha.kind != ctx.spec().latent.kind)
      throw Error(ErrorCode::BadInit, "initial alpha has the wrong latent kind");
    if (theta.cov.kind != ctx.spec().cov.kind)
      throw Error(ErrorCode::BadInit, "initial covariance has the wrong kind");
    validate_params(theta.alpha, J, ctx.data().covariate_count());
    validate_params(theta.cov, J, ctx.data().points());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadInit) throw;
    throw Error(ErrorCode::BadInit, std::string("invalid initial parameters: ") + e.what());
  }
}

}  // namespace

Theta initialize(const FitContext& ctx, const FitConfig& config) {
  const Dataset& data = ctx.data();
  const int J = ctx.states();
  const Index N = data.replicates(), n = data.points();
  const Vector lambdas = resolve_lambdas(config, J);

  if (config.init == InitStrategy::Supplied) {
    if (!config.initial) throw Error(ErrorCode::BadInit, "supplied initialisation without parameters");
    Theta theta = *config.initial;
    if (theta.lambdas.size() != J) theta.lambdas = lambdas;
    validate_supplied(ctx, theta);
    return theta;
  }

  const Matrix& B = ctx.B();
  const Matrix& R = ctx.R();
  Theta theta;
  theta.lambdas = lambdas;

  // Pooled fit and residual bands.
  const Vector pooled_w = Vector::Constant(n, static_cast<double>(N));
  const Vector pooled_wy = data.y.colwise().sum().transpose();
  const Vector phi0 = penalized_solve(B, R, pooled_w, pooled_wy, lambdas.mean()).phi;
  const Vector f0 = B * phi0;
  const Matrix resid0 = data.y.rowwise() - f0.transpose();
  Vector flat(N * n);
  for (Index k = 0; k < N; ++k)
    for (Index i = 0; i < n; ++i) flat[k * n + i] = resid0(k, i);
  const std::vector<int> flat_label = split_residuals(flat, J);
  Eigen::MatrixXi label(N, n);
  for (Index k = 0; k < N; ++k)
    for (Index i = 0; i < n; ++i) label(k, i) = flat_label[k * n + i];

  // Per-state fits on the assigned points.
  theta.phi.resize(J, B.cols());
  for (int j = 0; j < J; ++j) {
    Vector w = Vector::Zero(n), wy = Vector::Zero(n);
    for (Index k = 0; k < N; ++k)
      for (Index i = 0; i < n; ++i)
        if (label(k, i) == j) {
          w[i] += 1;
          wy[i] += data.y(k, i);
        }
    if ((w.array() > 0).count() >= 2) {
      theta.phi.row(j) = penalized_solve(B, R, w, wy, lambdas[j]).phi.transpose();
    } else {
      double shift = 0, count = 0;
      for (Index q = 0; q < flat.size(); ++q)
        if (flat_label[q] == j) {
          shift += flat[q];
          count += 1;
        }
      theta.phi.row(j) = (phi0.array() + (count > 0 ? shift / count : 0.0)).matrix().transpose();
    }
  }
  const Matrix F = ctx.fitted(theta);
  Matrix resid(N, n);
  for (Index k = 0; k < N; ++k)
    for (Index i = 0; i < n; ++i) resid(k, i) = data.y(k, i) - F(i, label(k, i));
  const double pooled_var = std::max(resid.squaredNorm() / static_cast<double>(N * n),
                                     1e-12 * (1.0 + data.y.squaredNorm() / static_cast<double>(N * n)));

  // Hidden-state law.
  theta.alpha.kind = ctx.spec().latent.kind;
  switch (theta.alpha.kind) {
    case LatentKind::Iid: {
      Vector freq = Vector::Zero(J);
      for (Index q = 0; q < label.size(); ++q) freq[label.data()[q]] += 1;
      theta.alpha.p = floored(freq / freq.sum());
      break;
    }
    case LatentKind::Markov: {
      Vector first = Vector::Zero(J);
      Matrix trans = Matrix::Zero(J, J);
      for (Index k = 0; k < N; ++k) {
        first[label(k, 0)] += 1;
        for (Index i = 1; i < n; ++i) trans(label(k, i - 1), label(k, i)) += 1;
      }
      theta.alpha.pi = floored(first / first.sum());
      theta.alpha.A.resize(J, J);
      for (int l = 0; l < J; ++l) {
        const double total = trans.row(l).sum();
        const Vector row = total > 0 ? Vector(trans.row(l).transpose() / total)
                                     : Vector(Vector::Constant(J, 1.0 / J));
        theta.alpha.A.row(l) = floored(row).transpose();
      }
      break;
    }
    case LatentKind::Covariate: {
      std::vector<Matrix> soft(J, Matrix::Constant(N, n, 0.1 / J));
      for (Index k = 0; k < N; ++k)
        for (Index i = 0; i < n; ++i) soft[label(k, i)](k, i) += 0.9;
      const Matrix zero = Matrix::Zero(J - 1, data.covariate_count() + 1);
      theta.alpha = fit_multinomial_logit(soft, data, zero).alpha;
      break;
    }
  }

  // Residual covariance.
  theta.cov.kind = ctx.spec().cov.kind;
  switch (theta.cov.kind) {
    case CovKind::IsoDiag:
      theta.cov.sigma2 = pooled_var;
      break;
    case CovKind::StateDiag: {
      theta.cov.state_sigma2 = Vector::Constant(J, pooled_var);
      for (int j = 0; j < J; ++j) {
        double ss = 0, count = 0;
        for (Index k = 0; k < N; ++k)
          for (Index i = 0; i < n; ++i)
            if (label(k, i) == j) {
              ss += resid(k, i) * resid(k, i);
              count += 1;
            }
        if (count > 1 && ss > 0) theta.cov.state_sigma2[j] = std::max(ss / count, 1e-6 * pooled_var);
      }
      break;
    }
    case CovKind::Unrestricted: {
      Matrix V = resid.transpose() * resid / static_cast<double>(N);
      for (int attempt = 0; attempt < 40; ++attempt) {
        Eigen::LLT<Matrix> llt(V);
        if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) break;
        V.diagonal().array() += 1e-6 * pooled_var * std::pow(10.0, attempt / 4);
      }
      theta.cov.V = V;
      break;
    }
    case CovKind::HomogRI:
    case CovKind::NonhomogRI: {
      InterceptStats st;
      st.replicates = N;
      st.points = n;
      st.weight = Vector::Zero(n + 1);
      st.rr = Vector::Zero(n + 1);
      st.cc.assign(n + 1, Eigen::Matrix2d::Zero());
      for (Index k = 0; k < N; ++k) {
        double c1 = 0, c2 = 0;
        Index m = 0;
        for (Index i = 0; i < n; ++i) {
          c1 += resid(k, i);
          if (label(k, i) == 1) {
            c2 += resid(k, i);
            ++m;
          }
        }
        st.weight[m] += 1;
        st.rr[m] += resid.row(k).squaredNorm();
        Eigen::Matrix2d c;
        c << c1 * c1, c1 * c2, c1 * c2, c2 * c2;
        st.cc[m] += c;
      }
      CovParams homog;
      try {
        homog = update_homog_ri(st);
      } catch (const Error&) {
        homog.kind = CovKind::HomogRI;
        homog.sigma2 = pooled_var;
        homog.d = 0;
      }
      if (theta.cov.kind == CovKind::HomogRI) {
        theta.cov = homog;
      } else {
        CovParams start;
        start.kind = CovKind::NonhomogRI;
        start.sigma2 = homog.sigma2;
        start.d1 = std::max(homog.d, 1e-3);
        start.d2 = std::max(0.5 * homog.d, 1e-3);
        theta.cov = update_nonhomog_ri(st, start);
      }
      break;
    }
  }
  return theta;
}

// -- driver -------------------------------------------------------------------

FitReport ecm_fit(const FitContext& ctx, const Theta& start, const FitConfig& config) {
  FitReport report;
  report.basis = ctx.basis();
  Theta theta = start;
  PosteriorTables post = ctx.posteriors(theta);
  double obj = post.loglik.sum() - ctx.penalty(theta);
  report.trace.push_back(obj);

  for (int it = 1; it <= config.max_iter; ++it) {
    std::vector<std::string> step_notes;
    Theta next = ecm_step(ctx, theta, post, &step_notes);
    PosteriorTables next_post = ctx.posteriors(next);
    const double next_obj = next_post.loglik.sum() - ctx.penalty(next);
    for (const auto& note : step_notes) add_note(report.notes, note);
    if (!(next_obj >= obj - 1e-8 * std::abs(obj))) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "objective decreased from " << obj << " to " << next_obj << " at iteration " << it;
      throw Error(ErrorCode::MonotonicityViolation, msg.str());
    }
    theta = std::move(next);
    post = std::move(next_post);
    report.trace.push_back(next_obj);
    report.iterations = it;
    const double change = std::abs(next_obj - obj);
    obj = next_obj;
    if (change <= config.tol * std::abs(obj)) {
      report.converged = true;
      break;
    }
  }
  if (!report.converged) add_note(report.notes, "not converged within max_iter iterations");

  report.theta = theta;
  report.posteriors = std::move(post);

  if (config.std_errors) {
    const Dataset& data = ctx.data();
    if (ctx.states() < 2) {
      report.std_errors_note = "no free hidden-state parameters";
    } else {
      try {
        const bool factorized =
            is_diagonal(ctx.spec().cov.kind) && theta.alpha.kind != LatentKind::Markov;
        if (theta.alpha.kind == LatentKind::Markov && !report.posteriors.has_joint()) {
          const StateSpace space(ctx.states(), data.points());
          PosteriorTables joint =
              joint_posterior(data, ctx.fitted(theta), CovStructure(theta.cov, data.points()),
                              theta.alpha, space);
          report.std_errors = louis_information(data, theta.alpha, joint, false);
        } else {
          report.std_errors = louis_information(data, theta.alpha, report.posteriors, factorized);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularInformation && e.code() != ErrorCode::BoundaryParameter)
          throw;
        report.std_errors_note = std::string(to_string(e.code())) + ": " + e.what();
      }
    }
  }
  return report;
}

FitReport ecm_fit(const Dataset& data, const ModelSpec& spec, const FitConfig& config) {
  validate(data, spec.latent, spec.cov, config.enumeration_cap, config.std_errors);
  const int K = config.K > 0 ? config.K : default_basis_size(data.points());
  FitContext ctx(data, spec, build_basis(data.x, K), config.path, config.enumeration_cap);
  const Theta start = initialize(ctx, config);
  return ecm_fit(ctx, start, config);
}

}  // namespace snr
