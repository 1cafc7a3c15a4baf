#include "snr/latent.hpp"

#include <algorithm>

namespace snr {

namespace {

double safe_log(double p) { return p > 0 ? std::log(p) : kNegInf; }

// 0 * log 0 = 0.
double xlogy(double w, double logp) { return w == 0.0 ? 0.0 : w * logp; }

Matrix log_matrix(const Matrix& m) { return m.unaryExpr([](double v) { return safe_log(v); }); }

}  // namespace

Matrix log_state_probs(const LatentParams& alpha, Index n, const Matrix* design) {
  const int J = alpha.states();
  switch (alpha.kind) {
    case LatentKind::Iid: {
      RowVector lp = alpha.p.transpose().unaryExpr([](double v) { return safe_log(v); });
      return lp.replicate(n, 1);
    }
    case LatentKind::Covariate: {
      if (design == nullptr) throw Error(ErrorCode::SpecMismatch, "covariate design required");
      Matrix out(n, J);
      out.col(0).setZero();
      out.rightCols(J - 1) = (*design) * alpha.beta.transpose();
      for (Index i = 0; i < n; ++i) {
        const double norm = log_sum_exp(out.row(i));
        out.row(i).array() -= norm;
      }
      return out;
    }
    case LatentKind::Markov:
      break;
  }
  throw Error(ErrorCode::SpecMismatch, "Markov states have no pointwise prior");
}

double log_prior(StateView s, const LatentParams& alpha, const Matrix* design) {
  const Index n = static_cast<Index>(s.size());
  if (alpha.kind == LatentKind::Markov) {
    double acc = safe_log(alpha.pi[s[0]]);
    for (Index i = 1; i < n; ++i) acc += safe_log(alpha.A(s[i - 1], s[i]));
    return acc;
  }
  const Matrix lp = log_state_probs(alpha, n, design);
  double acc = 0;
  for (Index i = 0; i < n; ++i) acc += lp(i, s[i]);
  return acc;
}

Matrix pointwise_loglik(const Dataset& data, Index k, const Matrix& F, const CovParams& cov) {
  const Index n = data.points(), J = F.cols();
  Matrix out(n, J);
  for (Index j = 0; j < J; ++j) {
    const double v = cov.kind == CovKind::StateDiag ? cov.state_sigma2[j] : cov.sigma2;
    const double c = -0.5 * (kLog2Pi + std::log(v));
    for (Index i = 0; i < n; ++i) {
      const double r = data.y(k, i) - F(i, j);
      out(i, j) = c - 0.5 * r * r / v;
    }
  }
  return out;
}

void marginalize_joint(PosteriorTables& post, const StateSpace& space, bool with_pairwise) {
  const Index N = post.joint.rows(), n = space.points(), S = space.size();
  const int J = space.states();
  post.marginal.assign(J, Matrix::Zero(N, n));
  if (with_pairwise) post.pairwise.assign(J * J, Matrix::Zero(N, std::max<Index>(n - 1, 0)));
  else post.pairwise.clear();
  for (Index k = 0; k < N; ++k) {
    for (Index idx = 0; idx < S; ++idx) {
      const double p = post.joint(k, idx);
      if (p == 0.0) continue;
      const StateView s = space[idx];
      for (Index i = 0; i < n; ++i) post.marginal[s[i]](k, i) += p;
      if (with_pairwise)
        for (Index i = 0; i + 1 < n; ++i) post.pairwise[s[i] * J + s[i + 1]](k, i) += p;
    }
  }
}

PosteriorTables joint_posterior(const Dataset& data, const Matrix& F, const CovStructure& cov,
                                const LatentParams& alpha, const StateSpace& space) {
  const Index N = data.replicates(), n = data.points(), S = space.size();
  const int J = space.states();
  PosteriorTables post;
  post.joint.resize(N, S);
  post.loglik.resize(N);

  const bool diagonal = is_diagonal(cov.kind());
  const bool markov = alpha.kind == LatentKind::Markov;
  Matrix log_a;
  Vector log_pi;
  if (markov) {
    log_a = log_matrix(alpha.A);
    log_pi = alpha.pi.unaryExpr([](double v) { return safe_log(v); });
  }

  Vector logw(S), r(n);
  for (Index k = 0; k < N; ++k) {
    // Pointwise table holding every per-position term that factorises.
    Matrix table = Matrix::Zero(n, J);
    if (!markov) {
      const Matrix design = alpha.kind == LatentKind::Covariate ? data.design(k) : Matrix();
      table += log_state_probs(alpha, n, alpha.kind == LatentKind::Covariate ? &design : nullptr);
    }
    if (diagonal) table += pointwise_loglik(data, k, F, cov.params());

    for (Index idx = 0; idx < S; ++idx) {
      const StateView s = space[idx];
      double acc = 0;
      for (Index i = 0; i < n; ++i) acc += table(i, s[i]);
      if (markov) {
        acc += log_pi[s[0]];
        for (Index i = 1; i < n; ++i) acc += log_a(s[i - 1], s[i]);
      }
      if (!diagonal && acc != kNegInf) {
        for (Index i = 0; i < n; ++i) r[i] = data.y(k, i) - F(i, s[i]);
        acc += cov.log_density(r, s);
      }
      logw[idx] = acc;
    }
    const double total = log_sum_exp(logw);
    if (!std::isfinite(total))
      throw Error(ErrorCode::DegenerateLikelihood,
                  "replicate " + std::to_string(k + 1) + " has zero likelihood under every state vector");
    post.loglik[k] = total;
    post.joint.row(k) = (logw.array() - total).exp().matrix().transpose();
  }
  marginalize_joint(post, space, markov);
  return post;
}

PosteriorTables marginal_posterior(const Dataset& data, const Matrix& F, const CovParams& cov,
                                   const LatentParams& alpha) {
  if (!is_diagonal(cov.kind))
    throw Error(ErrorCode::SpecMismatch, "pointwise posteriors need a diagonal covariance");
  if (alpha.kind == LatentKind::Markov)
    throw Error(ErrorCode::SpecMismatch, "pointwise posteriors need independent states");
  const Index N = data.replicates(), n = data.points(), J = F.cols();
  PosteriorTables post;
  post.marginal.assign(J, Matrix(N, n));
  post.loglik = Vector::Zero(N);
  for (Index k = 0; k < N; ++k) {
    const Matrix design = alpha.kind == LatentKind::Covariate ? data.design(k) : Matrix();
    const Matrix table =
        pointwise_loglik(data, k, F, cov) +
        log_state_probs(alpha, n, alpha.kind == LatentKind::Covariate ? &design : nullptr);
    for (Index i = 0; i < n; ++i) {
      const double norm = log_sum_exp(table.row(i));
      if (!std::isfinite(norm))
        throw Error(ErrorCode::DegenerateLikelihood,
                    "point " + std::to_string(i + 1) + " of replicate " + std::to_string(k + 1) +
                        " has zero likelihood");
      post.loglik[k] += norm;
      for (Index j = 0; j < J; ++j) post.marginal[j](k, i) = std::exp(table(i, j) - norm);
    }
  }
  return post;
}

PosteriorTables forward_backward(const Dataset& data, const Matrix& F, const CovParams& cov,
                                 const LatentParams& alpha) {
  if (alpha.kind != LatentKind::Markov)
    throw Error(ErrorCode::SpecMismatch, "forward-backward needs Markov states");
  if (!is_diagonal(cov.kind))
    throw Error(ErrorCode::SpecMismatch, "forward-backward needs a diagonal covariance");
  const Index N = data.replicates(), n = data.points();
  const int J = static_cast<int>(F.cols());
  const Matrix log_a = log_matrix(alpha.A);
  const Vector log_pi = alpha.pi.unaryExpr([](double v) { return safe_log(v); });

  PosteriorTables post;
  post.marginal.assign(J, Matrix(N, n));
  post.pairwise.assign(J * J, Matrix(N, n - 1));
  post.loglik.resize(N);

  Matrix fwd(n, J), bwd(n, J);
  Vector tmp(J);
  for (Index k = 0; k < N; ++k) {
    const Matrix emit = pointwise_loglik(data, k, F, cov);
    fwd.row(0) = log_pi.transpose() + emit.row(0);
    for (Index i = 1; i < n; ++i)
      for (int j = 0; j < J; ++j) {
        for (int l = 0; l < J; ++l) tmp[l] = fwd(i - 1, l) + log_a(l, j);
        fwd(i, j) = emit(i, j) + log_sum_exp(tmp);
      }
    bwd.row(n - 1).setZero();
    for (Index i = n - 2; i >= 0; --i)
      for (int l = 0; l < J; ++l) {
        for (int j = 0; j < J; ++j) tmp[j] = log_a(l, j) + emit(i + 1, j) + bwd(i + 1, j);
        bwd(i, l) = log_sum_exp(tmp);
      }
    const double total = log_sum_exp(fwd.row(n - 1));
    if (!std::isfinite(total))
      throw Error(ErrorCode::DegenerateLikelihood,
                  "replicate " + std::to_string(k + 1) + " has zero likelihood under the chain");
    post.loglik[k] = total;
    for (Index i = 0; i < n; ++i)
      for (int j = 0; j < J; ++j) post.marginal[j](k, i) = std::exp(fwd(i, j) + bwd(i, j) - total);
    for (Index i = 0; i + 1 < n; ++i)
      for (int l = 0; l < J; ++l)
        for (int j = 0; j < J; ++j)
          post.pairwise[l * J + j](k, i) =
              std::exp(fwd(i, l) + log_a(l, j) + emit(i + 1, j) + bwd(i + 1, j) - total);
  }
  return post;
}

// -- alpha updates ------------------------------------------------------------

double expected_log_prior(const PosteriorTables& post, const LatentParams& alpha,
                          const Dataset& data) {
  const int J = static_cast<int>(post.marginal.size());
  const Index N = data.replicates(), n = data.points();
  double acc = 0;
  switch (alpha.kind) {
    case LatentKind::Iid:
      for (int j = 0; j < J; ++j) acc += xlogy(post.marginal[j].sum(), safe_log(alpha.p[j]));
      break;
    case LatentKind::Markov:
      for (int j = 0; j < J; ++j) acc += xlogy(post.marginal[j].col(0).sum(), safe_log(alpha.pi[j]));
      for (int l = 0; l < J; ++l)
        for (int j = 0; j < J; ++j)
          acc += xlogy(post.pairwise[l * J + j].sum(), safe_log(alpha.A(l, j)));
      break;
    case LatentKind::Covariate:
      for (Index k = 0; k < N; ++k) {
        const Matrix design = data.design(k);
        const Matrix lp = log_state_probs(alpha, n, &design);
        for (Index i = 0; i < n; ++i)
          for (int j = 0; j < J; ++j) acc += xlogy(post.marginal[j](k, i), lp(i, j));
      }
      break;
  }
  return acc;
}

namespace {

struct LogitEval {
  double value = 0;
  Vector gradient;
  Matrix neg_hessian;
};

LogitEval logit_objective(const std::vector<Matrix>& w, const Dataset& data, const Matrix& beta,
                          bool derivatives) {
  const int J = static_cast<int>(w.size());
  const Index N = data.replicates(), n = data.points(), P = beta.cols();
  const Index D = (J - 1) * P;
  LogitEval out;
  if (derivatives) {
    out.gradient = Vector::Zero(D);
    out.neg_hessian = Matrix::Zero(D, D);
  }
  LatentParams alpha;
  alpha.kind = LatentKind::Covariate;
  alpha.beta = beta;
  Vector wk(J), prob(J);
  for (Index k = 0; k < N; ++k) {
    const Matrix design = data.design(k);
    const Matrix lp = log_state_probs(alpha, n, &design);
    for (Index i = 0; i < n; ++i) {
      double total = 0;
      for (int j = 0; j < J; ++j) {
        wk[j] = w[j](k, i);
        total += wk[j];
        out.value += xlogy(wk[j], lp(i, j));
        prob[j] = std::exp(lp(i, j));
      }
      if (!derivatives) continue;
      const auto x = design.row(i);
      for (int j = 1; j < J; ++j) {
        out.gradient.segment((j - 1) * P, P) += (wk[j] - total * prob[j]) * x.transpose();
        for (int l = 1; l < J; ++l) {
          const double c = total * prob[j] * ((j == l ? 1.0 : 0.0) - prob[l]);
          out.neg_hessian.block((j - 1) * P, (l - 1) * P, P, P).noalias() += c * x.transpose() * x;
        }
      }
    }
  }
  return out;
}

Matrix unflatten(const Vector& v, Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index j = 0; j < rows; ++j) out.row(j) = v.segment(j * cols, cols).transpose();
  return out;
}

Vector flatten(const Matrix& m) {
  Vector out(m.size());
  for (Index j = 0; j < m.rows(); ++j) out.segment(j * m.cols(), m.cols()) = m.row(j).transpose();
  return out;
}

}  // namespace

AlphaUpdate fit_multinomial_logit(const std::vector<Matrix>& weights, const Dataset& data,
                                  const Matrix& start) {
  const Index rows = start.rows(), cols = start.cols();
  AlphaUpdate out;
  out.alpha.kind = LatentKind::Covariate;
  Vector theta = flatten(start);
  LogitEval cur = logit_objective(weights, data, start, true);
  for (int step = 0; step < 50; ++step) {
    if (cur.gradient.lpNorm<Eigen::Infinity>() <= 1e-10) break;
    out.newton_steps = step + 1;
    Eigen::LDLT<Matrix> ldlt(cur.neg_hessian);
    Vector delta = ldlt.solve(cur.gradient);
    if (ldlt.info() != Eigen::Success || !delta.allFinite() ||
        (ldlt.vectorD().array() <= 0).any()) {
      Matrix H = cur.neg_hessian;
      H.diagonal().array() += 1e-8 * std::max(1.0, H.diagonal().maxCoeff());
      delta = H.ldlt().solve(cur.gradient);
    }
    const double slack = 1e-12 * std::max(1.0, std::abs(cur.value));
    double scale = 1.0;
    bool accepted = false;
    LogitEval next;
    Vector candidate;
    for (int halving = 0; halving <= 30; ++halving, scale *= 0.5) {
      candidate = theta + scale * delta;
      next = logit_objective(weights, data, unflatten(candidate, rows, cols), false);
      if (std::isfinite(next.value) && next.value >= cur.value - slack) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.newton_diverged = true;
      break;
    }
    theta = candidate;
    cur = logit_objective(weights, data, unflatten(theta, rows, cols), true);
  }
  out.alpha.beta = unflatten(theta, rows, cols);
  return out;
}

AlphaUpdate update_alpha(const PosteriorTables& post, const LatentSpec& spec, const Dataset& data,
                         const LatentParams& previous, std::vector<std::string>* notes) {
  const int J = spec.states;
  const Index N = data.replicates(), n = data.points();
  AlphaUpdate out;
  out.alpha.kind = spec.kind;
  switch (spec.kind) {
    case LatentKind::Iid: {
      out.alpha.p.resize(J);
      for (int j = 0; j < J; ++j) out.alpha.p[j] = post.marginal[j].sum();
      out.alpha.p /= static_cast<double>(N * n);
      out.alpha.p /= out.alpha.p.sum();
      break;
    }
    case LatentKind::Markov: {
      out.alpha.pi.resize(J);
      for (int j = 0; j < J; ++j) out.alpha.pi[j] = post.marginal[j].col(0).sum();
      out.alpha.pi /= out.alpha.pi.sum();
      out.alpha.A.resize(J, J);
      for (int l = 0; l < J; ++l) {
        double occupancy = 0;
        for (int j = 0; j < J; ++j) {
          out.alpha.A(l, j) = post.pairwise[l * J + j].sum();
          occupancy += out.alpha.A(l, j);
        }
        if (occupancy < 1e-12) {
          out.alpha.A.row(l) = previous.A.row(l);
          if (notes)
            notes->push_back("state " + std::to_string(l + 1) +
                             " has no expected transitions; transition row kept");
        } else {
          out.alpha.A.row(l) /= occupancy;
        }
      }
      break;
    }
    case LatentKind::Covariate: {
      out = fit_multinomial_logit(post.marginal, data, previous.beta);
      if (out.newton_diverged && notes)
        notes->push_back("logistic Newton-Raphson could not improve the objective; last iterate kept");
      break;
    }
  }
  return out;
}

}  // namespace snr
