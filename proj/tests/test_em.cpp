#include "fixtures.hpp"
#include "snr/covariance.hpp"
#include "snr/latent.hpp"
#include "snr/sim.hpp"
#include "snr/states.hpp"

#include <doctest.h>

using namespace snr;

namespace {

ModelSpec model(LatentKind lk, CovKind ck, int J = 2) {
  ModelSpec s;
  s.latent = {lk, J};
  s.cov.kind = ck;
  return s;
}

// Normal equations of the f-step objective assembled state vector by state
// vector from the dense selection matrices I_s B*.
Matrix dense_f_step(const Dataset& d, const Matrix& B, const Matrix& R, const Matrix& joint,
                    const CovParams& cov, const Vector& lambdas, int J) {
  const Index n = d.points(), K = B.cols();
  Matrix H = Matrix::Zero(J * K, J * K);
  Vector g = Vector::Zero(J * K);
  for (int j = 0; j < J; ++j) H.block(j * K, j * K, K, K) += 2 * lambdas[j] * R;
  for (Index idx = 0; idx < joint.cols(); ++idx) {
    const auto s = oracle::state_vector(idx, J, n);
    Matrix X = Matrix::Zero(n, J * K);
    for (Index i = 0; i < n; ++i) X.block(i, s[i] * K, 1, K) = B.row(i);
    const Matrix Vi = oracle::dense_cov(s, cov).inverse();
    for (Index k = 0; k < d.replicates(); ++k) {
      const double p = joint(k, idx);
      if (p == 0) continue;
      H += p * X.transpose() * Vi * X;
      g += p * X.transpose() * Vi * d.y.row(k).transpose();
    }
  }
  const Vector phi = H.fullPivLu().solve(g);
  return phi.reshaped(K, J).transpose();
}

}  // namespace

TEST_CASE("general f update") {
  std::mt19937_64 rng(31);

  SUBCASE("single state without penalty is the least-squares fit of the mean curve") {
    const Dataset d = fixture::random_dataset(4, 7, 1, rng);
    const FitContext ctx(d, model(LatentKind::Iid, CovKind::IsoDiag, 1), build_basis(d.x, 5),
                         EStepPath::General);
    CovParams c;
    c.sigma2 = 1;
    const Matrix joint = Matrix::Ones(4, 1);
    const Matrix phi = update_f_general(ctx, joint, CovStructure(c, 7), Vector::Zero(1));
    const Vector mean = d.y.colwise().mean().transpose();
    const Vector ls = ctx.B().colPivHouseholderQr().solve(mean);
    CHECK((phi.row(0).transpose() - ls).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("a state with no weight is determined by the penalty alone") {
    const Dataset d = fixture::random_dataset(4, 7, 2, rng);
    const FitContext ctx(d, model(LatentKind::Iid, CovKind::HomogRI), build_basis(d.x, 7));
    const Matrix joint = [&] {
      Matrix j = Matrix::Zero(4, ctx.space().size());
      j.col(0).setOnes();  // every point in state 1
      return j;
    }();
    CovParams c;
    c.kind = CovKind::HomogRI;
    c.sigma2 = 0.5;
    c.d = 0.3;
    const Matrix phi = update_f_general(ctx, joint, CovStructure(c, 7), Vector::Constant(2, 0.1));
    CHECK(std::abs(phi.row(1).dot(ctx.R() * phi.row(1).transpose())) < 1e-10);
  }
  SUBCASE("matches a dense assembly of the same quadratic") {
    const Index N = 3, n = 5;
    for (auto ck : {CovKind::IsoDiag, CovKind::Unrestricted, CovKind::HomogRI, CovKind::NonhomogRI}) {
      const Dataset d = fixture::random_dataset(N, n, 2, rng);
      const FitContext ctx(d, model(LatentKind::Iid, ck), build_basis(d.x, 5), EStepPath::General);
      const CovParams c = fixture::random_cov(ck, 2, n, rng);
      const Matrix F = oracle::random_matrix(rng, n, 2);
      const auto post = oracle::enumerate(d, F, c, fixture::random_alpha(LatentKind::Iid, 2, 0, rng));
      const Vector lambdas{{0.05, 0.3}};
      const Matrix phi = update_f_general(ctx, post.joint, CovStructure(c, n), lambdas);
      const Matrix ref = dense_f_step(d, ctx.B(), ctx.R(), post.joint, c, lambdas, 2);
      CHECK(oracle::max_rel(phi, ref) < 1e-8);
    }
  }
}

TEST_CASE("diagonal f update") {
  std::mt19937_64 rng(32);

  SUBCASE("agrees with the general path") {
    for (auto ck : {CovKind::IsoDiag, CovKind::StateDiag}) {
      const Dataset d = fixture::random_dataset(5, 6, 2, rng);
      const FitContext ctx(d, model(LatentKind::Iid, ck), build_basis(d.x, 6), EStepPath::General);
      const CovParams c = fixture::random_cov(ck, 2, 6, rng);
      const Matrix F = oracle::random_matrix(rng, 6, 2);
      const auto post = oracle::enumerate(d, F, c, fixture::random_alpha(LatentKind::Iid, 2, 0, rng));
      const Vector lambdas{{0.02, 0.4}};
      const Matrix general = update_f_general(ctx, post.joint, CovStructure(c, 6), lambdas);
      const Matrix diag =
          update_f_diagonal(d, ctx.B(), ctx.R(), post.marginal, state_variances(c, 2), lambdas);
      CHECK(oracle::max_rel(diag, general) < 1e-8);
    }
  }
  SUBCASE("equal weights, no penalty and K = n interpolate the mean curve") {
    const Dataset d = fixture::random_dataset(4, 6, 1, rng);
    const SplineBasis b = build_basis(d.x, 6);
    const Matrix B = basis_matrix(b, d.x);
    const Matrix phi = update_f_diagonal(d, B, penalty_matrix(b), {Matrix::Ones(4, 6)}, Vector::Ones(1),
                                         Vector::Zero(1));
    CHECK(((B * phi.row(0).transpose()) - d.y.colwise().mean().transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("the smoother reproduces constants") {
    const Vector x = Vector::LinSpaced(8, 0, 3);
    const SplineBasis b = build_basis(x, 7);
    const Matrix B = basis_matrix(b, x);
    const Matrix W = (oracle::random_matrix(rng, 5, 8).array().abs() + 0.1).matrix();
    for (double lambda : {1e-4, 1.0, 1e3}) {
      const PenalizedSolve ps = penalized_solve(B, penalty_matrix(b), W.colwise().sum().transpose(),
                                                Vector::Zero(8), lambda, true);
      Matrix sumH = Matrix::Zero(8, 8);
      for (Index k = 0; k < 5; ++k) sumH += ps.smoother * W.row(k).transpose().asDiagonal();
      CHECK(((sumH * Vector::Constant(8, 2.5)).array() - 2.5).abs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("observed objective") {
  std::mt19937_64 rng(33);

  SUBCASE("single state is a Gaussian log-likelihood minus the penalty") {
    const Dataset d = fixture::random_dataset(3, 5, 1, rng);
    const FitContext ctx(d, model(LatentKind::Iid, CovKind::HomogRI, 1), build_basis(d.x, 5));
    Theta t;
    t.phi = oracle::random_matrix(rng, 1, 5);
    t.alpha.kind = LatentKind::Iid;
    t.alpha.p = Vector::Ones(1);
    t.cov = fixture::random_cov(CovKind::HomogRI, 1, 5, rng);
    t.lambdas = Vector::Constant(1, 0.7);
    const Vector f = ctx.B() * t.phi.row(0).transpose();
    const Matrix V = oracle::dense_cov(std::vector<int>(5, 0), t.cov);
    double ref = -0.7 * t.phi.row(0).dot(ctx.R() * t.phi.row(0).transpose());
    for (Index k = 0; k < 3; ++k) ref += oracle::log_mvn(d.y.row(k).transpose() - f, V);
    CHECK(observed_objective(ctx, t) == doctest::Approx(ref).epsilon(1e-12));
  }
  SUBCASE("Markov chain against enumeration") {
    const Dataset d = fixture::random_dataset(4, 6, 2, rng);
    const FitContext ctx(d, model(LatentKind::Markov, CovKind::StateDiag), build_basis(d.x, 6));
    Theta t;
    t.phi = oracle::random_matrix(rng, 2, 6);
    t.alpha = fixture::random_alpha(LatentKind::Markov, 2, 0, rng);
    t.cov = fixture::random_cov(CovKind::StateDiag, 2, 6, rng);
    t.lambdas = Vector{{0.1, 0.2}};
    const double ref = oracle::total_loglik(d, ctx.fitted(t), t.cov, t.alpha) - ctx.penalty(t);
    CHECK(std::abs(observed_objective(ctx, t) - ref) <= 1e-10 * std::abs(ref));

    // linear in lambda
    const double q = t.phi.row(0).dot(ctx.R() * t.phi.row(0).transpose());
    Theta u = t;
    u.lambdas[0] += 1;
    CHECK(observed_objective(ctx, t) - observed_objective(ctx, u) == doctest::Approx(q).epsilon(1e-9));
  }
}

TEST_CASE("ECM fits") {
  SUBCASE("truth start on simulated data") {
    const SimDesign design = make_design(1);
    const SimData sim = generate_dataset(design, 99);
    FitConfig cfg;
    cfg.lambdas = Vector::Constant(2, design.lambda);
    cfg.init = InitStrategy::Supplied;
    cfg.initial = true_theta(design, build_basis(sim.data.x, 10), sim.data.x);
    const FitReport fit = ecm_fit(sim.data, design.model(), cfg);
    CHECK(fit.converged);
    for (std::size_t i = 1; i < fit.trace.size(); ++i)
      CHECK(fit.trace[i] >= fit.trace[i - 1] - 1e-8 * std::abs(fit.trace[i - 1]));

    // the data-driven start reaches the same optimum
    FitConfig off;
    off.lambdas = cfg.lambdas;
    const FitReport other = ecm_fit(sim.data, design.model(), off);
    CHECK(other.converged);
    CHECK(std::abs(other.trace.back() - fit.trace.back()) <= 1e-4 * std::abs(fit.trace.back()));
  }
  SUBCASE("single state reaches its fixed point in one sweep") {
    std::mt19937_64 rng(34);
    const Dataset d = fixture::random_dataset(6, 8, 1, rng);
    const FitContext ctx(d, model(LatentKind::Iid, CovKind::IsoDiag, 1), build_basis(d.x, 6));
    FitConfig cfg;
    cfg.lambdas = Vector::Zero(1);
    const Theta t0 = initialize(ctx, cfg);
    const Theta t1 = ecm_step(ctx, t0, ctx.posteriors(t0));
    const Theta t2 = ecm_step(ctx, t1, ctx.posteriors(t1));
    CHECK((t2.phi - t1.phi).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(t2.cov.sigma2 == doctest::Approx(t1.cov.sigma2).epsilon(1e-12));
  }
  SUBCASE("every model combination ascends") {
    for (auto lk : {LatentKind::Iid, LatentKind::Markov, LatentKind::Covariate})
      for (auto ck : {CovKind::IsoDiag, CovKind::StateDiag, CovKind::Unrestricted, CovKind::HomogRI,
                      CovKind::NonhomogRI}) {
        const Dataset d = fixture::two_level_dataset(25, 6, 40);
        FitConfig cfg;
        cfg.max_iter = 30;
        cfg.lambdas = Vector::Constant(2, 0.01);
        FitReport fit;
        CHECK_NOTHROW(fit = ecm_fit(d, model(lk, ck), cfg));
        for (std::size_t i = 1; i < fit.trace.size(); ++i)
          CHECK(fit.trace[i] >= fit.trace[i - 1] - 1e-8 * std::abs(fit.trace[i - 1]));
      }
  }
  SUBCASE("bad configurations") {
    std::mt19937_64 rng(35);
    const Dataset d = fixture::random_dataset(4, 6, 2, rng);
    FitConfig cfg;
    cfg.lambdas = Vector{{0.1, 0.1, 0.1}};
    CHECK_THROWS_AS(ecm_fit(d, model(LatentKind::Iid, CovKind::IsoDiag), cfg), Error);
    cfg = {};
    cfg.init = InitStrategy::Supplied;
    try {
      ecm_fit(d, model(LatentKind::Iid, CovKind::IsoDiag), cfg);
      FAIL("missing start accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadInit);
    }
  }
}

TEST_CASE("initialisation") {
  SUBCASE("well separated levels are split correctly") {
    Eigen::MatrixXi z;
    std::mt19937_64 rng(36);
    Dataset d;
    d.x = Vector::LinSpaced(10, 0, 1);
    d.y.resize(30, 10);
    z.resize(30, 10);
    std::normal_distribution<double> e(0, 0.05);
    std::bernoulli_distribution coin(0.4);
    for (Index k = 0; k < 30; ++k)
      for (Index i = 0; i < 10; ++i) {
        z(k, i) = coin(rng);
        d.y(k, i) = std::cos(2 * d.x[i]) + 3.0 * z(k, i) + e(rng);
      }
    const FitContext ctx(d, model(LatentKind::Iid, CovKind::IsoDiag), build_basis(d.x, 8));
    FitConfig cfg;
    const Theta t = initialize(ctx, cfg);
    const PosteriorTables post = ctx.posteriors(t);
    int agree = 0;
    for (Index k = 0; k < 30; ++k)
      for (Index i = 0; i < 10; ++i) agree += (post.marginal[1](k, i) > 0.5) == (z(k, i) == 1);
    CHECK(agree >= 0.95 * 300);
  }
  SUBCASE("single state is the pooled fit") {
    std::mt19937_64 rng(37);
    const Dataset d = fixture::random_dataset(5, 8, 1, rng);
    const FitContext ctx(d, model(LatentKind::Iid, CovKind::IsoDiag, 1), build_basis(d.x, 6));
    FitConfig cfg;
    cfg.lambdas = Vector::Constant(1, 0.05);
    const Theta t = initialize(ctx, cfg);
    const Matrix W = Matrix::Ones(5, 8);
    const Vector ref = oracle::weighted_fit(ctx.B(), ctx.R(), W, d.y, 0.05);
    CHECK((ctx.B() * t.phi.row(0).transpose() - ref).cwiseAbs().maxCoeff() < 1e-8);
  }
}
