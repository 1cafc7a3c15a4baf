#include "oracles.hpp"
#include "snr/basis.hpp"

#include <doctest.h>

#include <random>

using namespace snr;

TEST_CASE("basis on the simulation grid") {
  const Vector x = Vector::LinSpaced(10, 1.0, 100.0);
  const SplineBasis b = build_basis(x, 10);
  CHECK(b.size() == 10);
  CHECK(b.knots().size() == 14);  // 4 + 6 interior + 4
  CHECK(b.lower() == 1.0);
  CHECK(b.upper() == 100.0);
  for (int i = 4; i < 10; ++i) {
    CHECK(b.knots()[i] > 1.0);
    CHECK(b.knots()[i] < 100.0);
  }
}

TEST_CASE("minimal cubic basis has no interior knots") {
  const Vector x{{0.0, 1.0, 2.0, 3.0}};
  const SplineBasis b = build_basis(x, 4);
  const Matrix B = basis_matrix(b, x);
  CHECK(B.rows() == 4);
  CHECK(B.cols() == 4);
  CHECK(b.knots().head(4).isConstant(0.0));
  CHECK(b.knots().tail(4).isConstant(3.0));
}

TEST_CASE("rows sum to one and the left boundary row is a unit vector") {
  const Vector x = Vector::LinSpaced(101, 0.0, 1.0);
  const SplineBasis b = build_basis(x, 12);
  const Matrix B = basis_matrix(b, x);
  CHECK((B.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(B(0, 0) == doctest::Approx(1.0));
  CHECK(B.row(0).tail(11).cwiseAbs().maxCoeff() == 0.0);
  CHECK(B(100, 11) == doctest::Approx(1.0));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int r = 0; r < 1000; ++r) worst = std::max(worst, std::abs(b.row(u(rng)).sum() - 1.0));
  CHECK(worst <= 1e-12);
}

TEST_CASE("values and derivatives agree with the Cox-de Boor recursion") {
  const Vector x{{0.0, 0.3, 0.35, 1.1, 2.0, 2.2, 3.7, 4.0, 5.5}};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.5);
  for (Index K : {4, 7, 11}) {
    const SplineBasis b = build_basis(x, K);
    std::vector<double> pts{0.0, 5.5};
    for (int r = 0; r < 60; ++r) pts.push_back(u(rng));
    for (double t : pts) {
      for (int deriv = 0; deriv <= 2; ++deriv) {
        const RowVector row = b.row(t, deriv);
        for (Index v = 0; v < K; ++v) {
          const double ref = oracle::bspline_deriv(b.knots(), v, 3, t, deriv);
          CHECK(std::abs(row[v] - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
        }
      }
    }
  }
}

TEST_CASE("penalty matrix") {
  const Vector x = Vector::LinSpaced(9, 0.0, 2.0);
  const SplineBasis b = build_basis(x, 9);
  const Matrix R = penalty_matrix(b);
  const Index K = b.size();

  SUBCASE("symmetric and positive semi-definite") {
    CHECK((R - R.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(R);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
  SUBCASE("affine functions carry no penalty") {
    // Greville abscissae reproduce x exactly.
    Vector phi(K);
    for (Index v = 0; v < K; ++v)
      phi[v] = 0.7 - 2.5 * (b.knots()[v + 1] + b.knots()[v + 2] + b.knots()[v + 3]) / 3.0;
    CHECK(std::abs(phi.dot(R * phi)) <= 1e-10);
    const Matrix B = basis_matrix(b, x);
    CHECK(((B * phi).array() - (0.7 - 2.5 * x.array())).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("entries match adaptive quadrature") {
    const double scale = R.cwiseAbs().maxCoeff();
    for (Index u = 0; u < K; ++u) {
      for (Index v = u; v < K; ++v) {
        double ref = 0;
        // integrate span by span so the integrand is smooth
        for (Index m = 0; m + 1 < b.knots().size(); ++m) {
          const double a = b.knots()[m], c = b.knots()[m + 1];
          if (!(c > a)) continue;
          ref += oracle::adaptive_simpson(
              [&](double t) {
                const double tt = std::min(std::max(t, a), std::nextafter(c, a));
                return oracle::bspline_deriv(b.knots(), u, 3, tt, 2) *
                       oracle::bspline_deriv(b.knots(), v, 3, tt, 2);
              },
              a, c);
        }
        CHECK(std::abs(R(u, v) - ref) <= 1e-9 * std::max(1.0, scale));
      }
    }
  }
}

TEST_CASE("basis errors") {
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  CHECK(code([] { build_basis(Vector{{0.0, 1.0, 2.0}}, 4); }) == ErrorCode::GridTooSmall);
  CHECK(code([] { build_basis(Vector{{0.0, 1.0, 1.0, 2.0}}, 4); }) == ErrorCode::NonIncreasingGrid);
  CHECK(code([] { build_basis(Vector(Vector::LinSpaced(6, 0, 1)), 3); }) == ErrorCode::BadK);
  CHECK(code([] { build_basis(Vector(Vector::LinSpaced(6, 0, 1)), 9); }) == ErrorCode::BadK);
  const SplineBasis b = build_basis(Vector(Vector::LinSpaced(6, 0, 1)), 6);
  CHECK(code([&] { b.row(1.5); }) == ErrorCode::OutOfDomain);
}

TEST_CASE("basis works in long double") {
  using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const LVec x = LVec::LinSpaced(8, 0.0L, 1.0L);
  const auto b = build_basis(x, 8);
  const auto B = basis_matrix(b, x);
  CHECK(std::abs(static_cast<double>(B.rowwise().sum().maxCoeff()) - 1.0) < 1e-15);
}
