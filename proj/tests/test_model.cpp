#include "fixtures.hpp"
#include "snr/states.hpp"

#include <doctest.h>

using namespace snr;

namespace {

Dataset grid_only(Index N, Index n) {
  Dataset d;
  d.x = Vector::LinSpaced(n, 0, 1);
  d.y = Matrix::Zero(N, n);
  return d;
}

bool has(const std::vector<Violation>& v, ErrorCode c) {
  for (const auto& e : v)
    if (e.code == c) return true;
  return false;
}

}  // namespace

TEST_CASE("enumeration size checks") {
  const LatentSpec two{LatentKind::Iid, 2};
  CHECK(check(grid_only(3, 10), two, {CovKind::Unrestricted}).empty());
  CHECK(StateSpace(2, 10).size() == 1024);

  const auto big = check(grid_only(3, 25), two, {CovKind::HomogRI}, std::uint64_t{1} << 20);
  CHECK(has(big, ErrorCode::EnumerationTooLarge));
  CHECK(big.front().message.find("33554432") != std::string::npos);
  // diagonal kinds never enumerate
  CHECK(check(grid_only(3, 25), two, {CovKind::StateDiag}).empty());
  // unless standard errors need the joint table
  CHECK(has(check(grid_only(3, 25), two, {CovKind::StateDiag}, 1 << 20, true),
            ErrorCode::EnumerationTooLarge));
  CHECK(state_vector_count(10, 40) == std::numeric_limits<std::uint64_t>::max());
}

TEST_CASE("specification mismatches") {
  CHECK(has(check(grid_only(3, 5), {LatentKind::Iid, 3}, {CovKind::NonhomogRI}), ErrorCode::SpecMismatch));
  CHECK(has(check(grid_only(3, 5), {LatentKind::Covariate, 2}, {CovKind::IsoDiag}), ErrorCode::SpecMismatch));
  CHECK(has(check(grid_only(3, 3), {LatentKind::Iid, 2}, {CovKind::IsoDiag}), ErrorCode::GridTooSmall));
  Dataset d = grid_only(2, 5);
  d.y(1, 2) = std::nan("");
  CHECK(has(check(d, {LatentKind::Iid, 2}, {CovKind::IsoDiag}), ErrorCode::SpecMismatch));
  d = grid_only(2, 5);
  d.x[3] = d.x[2];
  CHECK(has(check(d, {LatentKind::Iid, 2}, {CovKind::IsoDiag}), ErrorCode::NonIncreasingGrid));
  CHECK_THROWS_AS(validate(grid_only(3, 5), {LatentKind::Iid, 3}, {CovKind::NonhomogRI}), Error);
}

TEST_CASE("parameter validation") {
  LatentParams a;
  a.kind = LatentKind::Markov;
  a.pi = Vector{{0.4, 0.6}};
  a.A = Matrix{{0.9, 0.1}, {0.5, 0.4}};
  CHECK_THROWS_AS(validate_params(a, 2, 0), Error);
  a.A(1, 1) = 0.5;
  CHECK_NOTHROW(validate_params(a, 2, 0));

  CovParams c;
  c.kind = CovKind::Unrestricted;
  c.V = Matrix{{1.0, 2.0}, {2.0, 1.0}};
  try {
    validate_params(c, 2, 2);
    FAIL("indefinite V accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotSPD);
  }
  c.kind = CovKind::HomogRI;
  c.sigma2 = 1;
  c.d = -0.1;
  CHECK_THROWS_AS(validate_params(c, 2, 4), Error);
}

TEST_CASE("state space ordering puts the first position fastest") {
  const StateSpace space(3, 4);
  CHECK(space.size() == 81);
  for (Index idx = 0; idx < space.size(); ++idx) {
    const auto s = space[idx];
    const auto ref = oracle::state_vector(idx, 3, 4);
    for (Index i = 0; i < 4; ++i) CHECK(static_cast<int>(s[i]) == ref[i]);
    CHECK(space.index_of(s) == idx);
  }
  const auto s = space[1 + 2 * 3 + 2 * 27];  // (1, 2, 0, 2)
  CHECK(StateSpace::counts(s, 3) == std::vector<int>{1, 1, 2});
  const auto t = StateSpace::transitions(s, 3);
  CHECK(t[1 * 3 + 2] == 1);
  CHECK(t[2 * 3 + 0] == 1);
  CHECK(t[0 * 3 + 2] == 1);
}

TEST_CASE("relabelling states") {
  std::mt19937_64 rng(5);
  FitReport fit;
  fit.theta.phi = oracle::random_matrix(rng, 2, 4);
  fit.theta.alpha = fixture::random_alpha(LatentKind::Markov, 2, 0, rng);
  fit.theta.cov = fixture::random_cov(CovKind::StateDiag, 2, 4, rng);
  fit.theta.lambdas = Vector{{0.1, 0.2}};
  fit.posteriors.marginal = {Matrix::Constant(1, 4, 0.3), Matrix::Constant(1, 4, 0.7)};

  const FitReport swapped = permute_states(fit, {1, 0});
  CHECK(swapped.theta.phi.row(0) == fit.theta.phi.row(1));
  CHECK(swapped.theta.alpha.A(0, 1) == fit.theta.alpha.A(1, 0));
  CHECK(swapped.theta.alpha.pi[0] == fit.theta.alpha.pi[1]);
  CHECK(swapped.theta.cov.state_sigma2[0] == fit.theta.cov.state_sigma2[1]);
  CHECK(swapped.theta.lambdas[0] == 0.2);
  CHECK(swapped.posteriors.marginal[0](0, 0) == 0.7);
  CHECK_THROWS_AS(permute_states(fit, {0, 0}), Error);

  // Covariate logits re-reference to the new state 0.
  LatentParams c;
  c.kind = LatentKind::Covariate;
  c.beta = Matrix{{2.0, 5.0}};
  CHECK(permute_states(c, {1, 0}).beta == Matrix{{-2.0, -5.0}});
}
