#ifndef SNR_TESTS_FIXTURES_HPP
#define SNR_TESTS_FIXTURES_HPP

// Small synthetic instances shared by the unit and acceptance tests.

#include "oracles.hpp"
#include "snr/em.hpp"

#include <cmath>
#include <random>

namespace fixture {

using snr::CovKind;
using snr::CovParams;
using snr::Dataset;
using snr::Index;
using snr::LatentKind;
using snr::LatentParams;
using snr::Matrix;
using snr::Vector;

inline LatentParams random_alpha(LatentKind kind, int J, Index covariates, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  LatentParams a;
  a.kind = kind;
  auto simplex = [&] {
    Vector v(J);
    for (int j = 0; j < J; ++j) v[j] = u(rng);
    return Vector(v / v.sum());
  };
  switch (kind) {
    case LatentKind::Iid: a.p = simplex(); break;
    case LatentKind::Markov:
      a.pi = simplex();
      a.A.resize(J, J);
      for (int l = 0; l < J; ++l) a.A.row(l) = simplex().transpose();
      break;
    case LatentKind::Covariate:
      a.beta = oracle::random_matrix(rng, J - 1, covariates + 1, 0.8);
      break;
  }
  return a;
}

inline CovParams random_cov(CovKind kind, int J, Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  CovParams c;
  c.kind = kind;
  c.sigma2 = 0.3 * u(rng);
  switch (kind) {
    case CovKind::StateDiag:
      c.state_sigma2.resize(J);
      for (int j = 0; j < J; ++j) c.state_sigma2[j] = 0.3 * u(rng);
      break;
    case CovKind::Unrestricted: {
      const Matrix G = oracle::random_matrix(rng, n, n, 0.3);
      c.V = G * G.transpose() + 0.2 * Matrix::Identity(n, n);
      break;
    }
    case CovKind::HomogRI: c.d = u(rng); break;
    case CovKind::NonhomogRI:
      c.d1 = 0.5 * u(rng);
      c.d2 = u(rng);
      break;
    default: break;
  }
  return c;
}

// y_ik = F(i, s_ik) + noise with random states; one standard normal covariate.
inline Dataset random_dataset(Index N, Index n, int J, std::mt19937_64& rng, double noise = 0.5) {
  Dataset d;
  d.x = Vector::LinSpaced(n, 0.0, 1.0);
  d.y.resize(N, n);
  d.covariates.assign(1, oracle::random_matrix(rng, N, n));
  std::uniform_int_distribution<int> pick(0, J - 1);
  std::normal_distribution<double> z(0.0, noise);
  for (Index k = 0; k < N; ++k)
    for (Index i = 0; i < n; ++i) d.y(k, i) = 1.5 * pick(rng) + std::sin(3 * d.x[i]) + z(rng);
  return d;
}

// Two smooth levels with a per-replicate intercept and a state-2 intercept.
// States follow a two-state Markov chain whose switching depends weakly on
// the covariate, so every latent kind is a reasonable fit.
inline Dataset two_level_dataset(Index N, Index n, std::uint64_t seed, Eigen::MatrixXi* states = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d;
  d.x = Vector::LinSpaced(n, 0.0, 1.0);
  d.y.resize(N, n);
  d.covariates.assign(1, Matrix(N, n));
  if (states) states->resize(N, n);
  for (Index k = 0; k < N; ++k) {
    const double delta = 0.15 * z(rng), extra = 0.2 * z(rng);
    int s = u(rng) < 0.5 ? 0 : 1;
    for (Index i = 0; i < n; ++i) {
      const double v = z(rng);
      d.covariates[0](k, i) = v;
      if (i > 0) {
        const double p_switch = 1.0 / (1.0 + std::exp(1.0 - 0.8 * v));
        if (u(rng) < p_switch) s = 1 - s;
      }
      if (states) (*states)(k, i) = s;
      const double f = std::sin(2.0 * d.x[i]) + (s == 1 ? 1.0 : 0.0);
      d.y(k, i) = f + delta + (s == 1 ? extra : 0.0) + 0.1 * z(rng);
    }
  }
  return d;
}

}  // namespace fixture

#endif  // SNR_TESTS_FIXTURES_HPP
