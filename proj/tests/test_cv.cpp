#include "fixtures.hpp"
#include "snr/cv.hpp"
#include "snr/sim.hpp"

#include <doctest.h>

using namespace snr;

namespace {

// Weighted distance of v from its best affine fit a + b x.
double affine_residual(const Vector& x, const Vector& v, const Vector& w) {
  Matrix X(x.size(), 2);
  X.col(0).setOnes();
  X.col(1) = x;
  const Vector sw = w.cwiseSqrt();
  const Vector coef = (sw.asDiagonal() * X).colPivHouseholderQr().solve(sw.cwiseProduct(v));
  const Vector e = v - X * coef;
  return e.dot(w.cwiseProduct(e));
}

}  // namespace

TEST_CASE("shortcut criterion equals literal refitting") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  const Vector x = Vector::LinSpaced(8, 0, 1);
  const SplineBasis b = build_basis(x, 8);
  const Matrix B = basis_matrix(b, x), R = penalty_matrix(b);
  for (int rep = 0; rep < 5; ++rep) {
    Matrix W(6, 8);
    for (Index k = 0; k < 6; ++k)
      for (Index i = 0; i < 8; ++i) W(k, i) = u(rng);
    W(2, 3) = 0;  // zero-weight point
    const Matrix y = oracle::random_matrix(rng, 6, 8);
    for (double lambda : {1e-5, 1e-2, 1.0, 100.0}) {
      const double ref = oracle::cv_refit(B, R, W, y, lambda);
      CHECK(std::abs(cv_score(B, R, W, y, lambda).value - ref) <= 1e-8 * ref);
      CHECK(std::abs(cv_score_direct(B, R, W, y, lambda) - ref) <= 1e-8 * ref);
    }
  }
}

TEST_CASE("boundary cases") {
  std::mt19937_64 rng(42);
  const Vector x = Vector::LinSpaced(7, 0, 2);
  const SplineBasis b = build_basis(x, 6);
  const Matrix B = basis_matrix(b, x), R = penalty_matrix(b);

  SUBCASE("one replicate: the left-out fit is the affine projection") {
    const Matrix y = oracle::random_matrix(rng, 1, 7);
    const Matrix W = (oracle::random_matrix(rng, 1, 7).array().abs() + 0.2).matrix();
    const double ref = affine_residual(x, y.row(0).transpose(), W.row(0).transpose());
    for (double lambda : {1e-3, 1.0}) {
      const CvScore s = cv_score(B, R, W, y, lambda);
      CHECK(s.value == doctest::Approx(ref).epsilon(1e-8));
      CHECK(s.direct_fallbacks == 1);
    }
  }
  SUBCASE("a single weighted replicate under a heavy penalty") {
    const Matrix y = oracle::random_matrix(rng, 4, 7);
    Matrix W = Matrix::Zero(4, 7);
    W.row(1) = (oracle::random_matrix(rng, 1, 7).array().abs() + 0.2).matrix();
    const double ref = affine_residual(x, y.row(1).transpose(), W.row(1).transpose());
    CHECK(cv_score(B, R, W, y, 1e6).value == doctest::Approx(ref).epsilon(1e-6));
  }
  SUBCASE("zero-weight points contribute nothing") {
    const Matrix y = oracle::random_matrix(rng, 4, 7);
    Matrix W = Matrix::Ones(4, 7);
    W(0, 2) = 0;
    Matrix y2 = y;
    y2(0, 2) += 1e3;
    CHECK(cv_score(B, R, W, y, 0.1).value == doctest::Approx(cv_score(B, R, W, y2, 0.1).value).epsilon(1e-9));
  }
}

TEST_CASE("smoothing parameter selection") {
  ModelSpec spec;
  spec.latent = {LatentKind::Iid, 2};
  spec.cov.kind = CovKind::IsoDiag;

  SUBCASE("selected values stabilise on simulated data") {
    const SimData sim = generate_dataset(make_design(1), 5);
    FitConfig cfg;
    const CvResult r = select_lambdas(sim.data, spec, cfg, {});
    CHECK(r.stabilized);
    CHECK(r.iterations.size() <= 20);
    CHECK(r.lambdas == r.iterations.back().lambdas_out);
    CHECK(r.fit.converged);
  }
  SUBCASE("single grid value") {
    const SimData sim = generate_dataset(make_design(1), 6);
    CvConfig cv;
    cv.grid = {0.5};
    const CvResult r = select_lambdas(sim.data, spec, {}, cv);
    CHECK(r.iterations.size() == 1);
    CHECK(r.lambdas == Vector::Constant(2, 0.5));
  }
  SUBCASE("the rougher function gets the smaller penalty") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> e(0, 0.05);
    std::bernoulli_distribution coin(0.5);
    Dataset d;
    d.x = Vector::LinSpaced(30, 0, 1);
    d.y.resize(40, 30);
    for (Index k = 0; k < 40; ++k)
      for (Index i = 0; i < 30; ++i) {
        const double t = d.x[i];
        d.y(k, i) = coin(rng) ? 2 * t : 3 + 2 * t + 0.6 * std::sin(9 * M_PI * t);
        d.y(k, i) += e(rng);
      }
    const CvResult r = select_lambdas(d, spec, {}, {});
    CHECK(r.lambdas[0] > r.lambdas[1]);
  }
  SUBCASE("only diagonal covariances") {
    spec.cov.kind = CovKind::HomogRI;
    const SimData sim = generate_dataset(make_design(1), 7);
    try {
      select_lambdas(sim.data, spec, {}, {});
      FAIL("expected Unsupported");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Unsupported);
    }
  }
}
