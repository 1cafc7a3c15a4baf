#include "snr/inference.hpp"

#include "snr/latent.hpp"
#include "snr/states.hpp"

#include <functional>

namespace snr {

std::vector<std::string> alpha_coordinate_names(const LatentParams& alpha) {
  std::vector<std::string> out;
  switch (alpha.kind) {
    case LatentKind::Iid:
      for (int j = 0; j + 1 < alpha.states(); ++j) out.push_back("p" + std::to_string(j + 1));
      break;
    case LatentKind::Markov:
      out = {"pi1", "a12", "a21"};
      break;
    case LatentKind::Covariate:
      for (Index c = 0; c < alpha.beta.cols(); ++c) out.push_back("beta" + std::to_string(c));
      break;
  }
  return out;
}

Vector alpha_coordinates(const LatentParams& alpha) {
  switch (alpha.kind) {
    case LatentKind::Iid: return alpha.p.head(alpha.states() - 1);
    case LatentKind::Markov: return Vector{{alpha.pi[0], alpha.A(0, 1), alpha.A(1, 0)}};
    case LatentKind::Covariate: return alpha.beta.row(0).transpose();
  }
  return {};
}

void finish_information(InformationMatrix& info) {
  const Matrix sym = 0.5 * (info.information + info.information.transpose());
  if (!sym.allFinite())
    throw Error(ErrorCode::SingularInformation, "information matrix is not finite");
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14)
    throw Error(ErrorCode::SingularInformation, "information matrix is not positive definite");
  info.covariance = llt.solve(Matrix::Identity(sym.rows(), sym.cols()));
  if ((info.covariance.diagonal().array() <= 0).any() || !info.covariance.allFinite())
    throw Error(ErrorCode::SingularInformation, "inverse information has a non-positive diagonal");
  info.se = info.covariance.diagonal().cwiseSqrt();
}

namespace {

void require_two_states(const LatentParams& alpha) {
  if (alpha.kind != LatentKind::Iid && alpha.states() != 2)
    throw Error(ErrorCode::SpecMismatch, "standard errors for this latent kind need J = 2");
}

InformationMatrix start(const LatentParams& alpha) {
  InformationMatrix info;
  info.names = alpha_coordinate_names(alpha);
  info.estimates = alpha_coordinates(alpha);
  return info;
}

// P(z = 2 | v) for every point of one replicate.
Vector state2_probs(const LatentParams& alpha, const Matrix& design) {
  const Vector eta = design * alpha.beta.row(0).transpose();
  return eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
}

// Score and negative Hessian of log p(z_k = s | alpha) in the free coordinates.
struct PathTerms {
  Vector g;
  Matrix negh;
};

struct Accumulator {
  Index dim;
  Matrix neg_hessian, score_cov;
  explicit Accumulator(Index d)
      : dim(d), neg_hessian(Matrix::Zero(d, d)), score_cov(Matrix::Zero(d, d)) {}
};

// sum_k E(-h) and sum_k Cov(g) by enumeration. `terms(k, s, design_k)`
// returns the complete-data score and curvature of state vector s.
Accumulator enumerate(const Dataset& data, const LatentParams& alpha, const PosteriorTables& post,
                      Index dim,
                      const std::function<void(Index, StateView, PathTerms&)>& terms) {
  if (!post.has_joint())
    throw Error(ErrorCode::SpecMismatch, "joint posterior table required for enumeration");
  const StateSpace space(alpha.states(), data.points());
  if (post.joint.cols() != space.size())
    throw Error(ErrorCode::SpecMismatch, "joint posterior table has the wrong width");
  Accumulator acc(dim);
  PathTerms t{Vector(dim), Matrix(dim, dim)};
  for (Index k = 0; k < data.replicates(); ++k) {
    Vector mean = Vector::Zero(dim);
    Matrix second = Matrix::Zero(dim, dim);
    for (Index idx = 0; idx < space.size(); ++idx) {
      const double p = post.joint(k, idx);
      if (p == 0.0) continue;
      terms(k, space[idx], t);
      mean += p * t.g;
      second.noalias() += p * t.g * t.g.transpose();
      acc.neg_hessian += p * t.negh;
    }
    acc.score_cov += second - mean * mean.transpose();
  }
  return acc;
}

Accumulator enumerate_iid(const Dataset& data, const LatentParams& alpha,
                          const PosteriorTables& post) {
  const int J = alpha.states();
  const Vector& p = alpha.p;
  return enumerate(data, alpha, post, J - 1, [&](Index, StateView s, PathTerms& t) {
    const auto n = StateSpace::counts(s, J);
    const double last = n[J - 1] / p[J - 1];
    const double last2 = n[J - 1] / (p[J - 1] * p[J - 1]);
    for (int j = 0; j + 1 < J; ++j) t.g[j] = n[j] / p[j] - last;
    t.negh.setConstant(last2);
    for (int j = 0; j + 1 < J; ++j) t.negh(j, j) += n[j] / (p[j] * p[j]);
  });
}

Accumulator enumerate_markov(const Dataset& data, const LatentParams& alpha,
                             const PosteriorTables& post) {
  const double pi = alpha.pi[0], a12 = alpha.A(0, 1), a21 = alpha.A(1, 0);
  return enumerate(data, alpha, post, 3, [&](Index, StateView s, PathTerms& t) {
    const auto tr = StateSpace::transitions(s, 2);  // tr[l * 2 + j]
    const double first = s[0] == 0 ? 1.0 : 0.0;
    const double n11 = tr[0], n12 = tr[1], n21 = tr[2], n22 = tr[3];
    t.g[0] = first / pi - (1 - first) / (1 - pi);
    t.g[1] = n12 / a12 - n11 / (1 - a12);
    t.g[2] = n21 / a21 - n22 / (1 - a21);
    t.negh.setZero();
    t.negh(0, 0) = first / (pi * pi) + (1 - first) / ((1 - pi) * (1 - pi));
    t.negh(1, 1) = n12 / (a12 * a12) + n11 / ((1 - a12) * (1 - a12));
    t.negh(2, 2) = n21 / (a21 * a21) + n22 / ((1 - a21) * (1 - a21));
  });
}

Accumulator enumerate_covariate(const Dataset& data, const LatentParams& alpha,
                                const PosteriorTables& post) {
  const Index P = alpha.beta.cols();
  Index cached = -1;
  Matrix design, negh;
  Vector prob;
  return enumerate(data, alpha, post, P, [&](Index k, StateView s, PathTerms& t) {
    if (k != cached) {
      design = data.design(k);
      prob = state2_probs(alpha, design);
      negh = design.transpose() * (prob.array() * (1 - prob.array())).matrix().asDiagonal() * design;
      cached = k;
    }
    t.g.setZero();
    for (Index i = 0; i < design.rows(); ++i)
      t.g += ((s[i] == 1 ? 1.0 : 0.0) - prob[i]) * design.row(i).transpose();
    t.negh = negh;
  });
}

void check_markov_boundary(const LatentParams& alpha) {
  const double vals[] = {alpha.pi[0], alpha.A(0, 1), alpha.A(1, 0)};
  const char* names[] = {"pi1", "a12", "a21"};
  for (int c = 0; c < 3; ++c)
    if (vals[c] < 1e-8 || vals[c] > 1 - 1e-8)
      throw Error(ErrorCode::BoundaryParameter,
                  std::string(names[c]) + " is on the boundary of the parameter space");
}

}  // namespace

InformationMatrix louis_information_generic(const Dataset& data, const LatentParams& alpha,
                                            const PosteriorTables& post) {
  require_two_states(alpha);
  Accumulator acc(0);
  switch (alpha.kind) {
    case LatentKind::Iid: acc = enumerate_iid(data, alpha, post); break;
    case LatentKind::Markov: acc = enumerate_markov(data, alpha, post); break;
    case LatentKind::Covariate: acc = enumerate_covariate(data, alpha, post); break;
  }
  InformationMatrix info = start(alpha);
  info.information = acc.neg_hessian - acc.score_cov;
  return info;
}

InformationMatrix louis_information_iid_closed(const Dataset& data, const LatentParams& alpha,
                                               const PosteriorTables& post) {
  if (alpha.kind != LatentKind::Iid) throw Error(ErrorCode::SpecMismatch, "iid states required");
  const int J = alpha.states();
  const double Nn = static_cast<double>(data.replicates() * data.points());
  const Vector& p = alpha.p;
  Matrix curvature = Matrix::Constant(J - 1, J - 1, Nn / p[J - 1]);
  for (int j = 0; j + 1 < J; ++j) curvature(j, j) = Nn * (1 / p[j] + 1 / p[J - 1]);

  const StateSpace space(J, data.points());
  if (!post.has_joint() || post.joint.cols() != space.size())
    throw Error(ErrorCode::SpecMismatch, "joint posterior table required");
  // Scores depend on s only through the counts n_{s,j}.
  Matrix u(space.size(), J - 1);
  for (Index idx = 0; idx < space.size(); ++idx) {
    const auto n = StateSpace::counts(space[idx], J);
    for (int j = 0; j + 1 < J; ++j) u(idx, j) = n[j] / p[j] - n[J - 1] / p[J - 1];
  }
  Matrix cross = Matrix::Zero(J - 1, J - 1);
  for (Index k = 0; k < data.replicates(); ++k) {
    const auto w = post.joint.row(k).transpose();
    const Vector mean = u.transpose() * w;
    cross += u.transpose() * w.asDiagonal() * u - mean * mean.transpose();
  }
  InformationMatrix info = start(alpha);
  info.information = curvature - cross;
  return info;
}

InformationMatrix louis_information_markov_closed(const Dataset& data, const LatentParams& alpha,
                                                  const PosteriorTables& post) {
  if (alpha.kind != LatentKind::Markov || alpha.states() != 2)
    throw Error(ErrorCode::SpecMismatch, "Markov states with J = 2 required");
  check_markov_boundary(alpha);
  const double N = static_cast<double>(data.replicates());
  const Index n = data.points();
  const double pi = alpha.pi[0], a12 = alpha.A(0, 1), a21 = alpha.A(1, 0);
  const double occ1 = post.marginal[0].leftCols(n - 1).sum();
  const double occ2 = post.marginal[1].leftCols(n - 1).sum();
  Matrix curvature = Matrix::Zero(3, 3);
  curvature(0, 0) = N / (pi * (1 - pi));
  curvature(1, 1) = occ1 / (a12 * (1 - a12));
  curvature(2, 2) = occ2 / (a21 * (1 - a21));

  const Accumulator acc = enumerate_markov(data, alpha, post);
  InformationMatrix info = start(alpha);
  info.information = curvature - acc.score_cov;
  return info;
}

InformationMatrix louis_information_pointwise(const Dataset& data, const LatentParams& alpha,
                                              const PosteriorTables& post) {
  require_two_states(alpha);
  const Index N = data.replicates(), n = data.points();
  InformationMatrix info = start(alpha);
  switch (alpha.kind) {
    case LatentKind::Iid: {
      const int J = alpha.states();
      const Vector& p = alpha.p;
      Matrix curvature = Matrix::Zero(J - 1, J - 1), cross = Matrix::Zero(J - 1, J - 1);
      // g(j) = e_j / p_j for j < J, -1 / p_J for the last state.
      Matrix g(J, J - 1);
      g.setZero();
      for (int j = 0; j + 1 < J; ++j) g(j, j) = 1 / p[j];
      g.row(J - 1).setConstant(-1 / p[J - 1]);
      Vector q(J);
      for (Index k = 0; k < N; ++k)
        for (Index i = 0; i < n; ++i) {
          for (int j = 0; j < J; ++j) q[j] = post.marginal[j](k, i);
          const Vector mean = g.transpose() * q;
          cross += g.transpose() * q.asDiagonal() * g - mean * mean.transpose();
          curvature.array() += q[J - 1] / (p[J - 1] * p[J - 1]);
          for (int j = 0; j + 1 < J; ++j) curvature(j, j) += q[j] / (p[j] * p[j]);
        }
      info.information = curvature - cross;
      break;
    }
    case LatentKind::Covariate: {
      const Index P = alpha.beta.cols();
      Matrix curvature = Matrix::Zero(P, P), cross = Matrix::Zero(P, P);
      for (Index k = 0; k < N; ++k) {
        const Matrix design = data.design(k);
        const Vector prob = state2_probs(alpha, design);
        const Vector q = post.marginal[1].row(k).transpose();
        curvature.noalias() +=
            design.transpose() * (prob.array() * (1 - prob.array())).matrix().asDiagonal() * design;
        cross.noalias() +=
            design.transpose() * (q.array() * (1 - q.array())).matrix().asDiagonal() * design;
      }
      info.information = curvature - cross;
      break;
    }
    case LatentKind::Markov:
      throw Error(ErrorCode::SpecMismatch, "Markov posteriors do not factorise over points");
  }
  return info;
}

InformationMatrix louis_information_covariate(const Dataset& data, const LatentParams& alpha,
                                              const PosteriorTables& post) {
  if (alpha.kind != LatentKind::Covariate || alpha.states() != 2)
    throw Error(ErrorCode::SpecMismatch, "covariate states with J = 2 required");
  return post.has_joint() ? louis_information_generic(data, alpha, post)
                          : louis_information_pointwise(data, alpha, post);
}

InformationMatrix louis_information(const Dataset& data, const LatentParams& alpha,
                                    const PosteriorTables& post, bool factorized) {
  const bool pointwise = factorized || !post.has_joint();
  InformationMatrix info;
  switch (alpha.kind) {
    case LatentKind::Iid:
      info = pointwise ? louis_information_pointwise(data, alpha, post)
                       : louis_information_iid_closed(data, alpha, post);
      break;
    case LatentKind::Markov: info = louis_information_markov_closed(data, alpha, post); break;
    case LatentKind::Covariate:
      info = pointwise ? louis_information_pointwise(data, alpha, post)
                       : louis_information_generic(data, alpha, post);
      break;
  }
  finish_information(info);
  return info;
}

}  // namespace snr
