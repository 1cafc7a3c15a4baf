#include "snr/sim.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

namespace snr {

Vector SimDesign::grid() const { return Vector::LinSpaced(points, 1.0, 100.0); }

ModelSpec SimDesign::model() const {
  ModelSpec spec;
  spec.latent.states = 2;
  switch (id) {
    case 1: spec.latent.kind = LatentKind::Iid; spec.cov.kind = CovKind::HomogRI; break;
    case 2: spec.latent.kind = LatentKind::Markov; spec.cov.kind = CovKind::HomogRI; break;
    case 3: spec.latent.kind = LatentKind::Covariate; spec.cov.kind = CovKind::IsoDiag; break;
    default: throw Error(ErrorCode::InvalidParams, "design must be 1, 2 or 3");
  }
  return spec;
}

SimDesign make_design(int id) {
  if (id < 1 || id > 3) throw Error(ErrorCode::InvalidParams, "design must be 1, 2 or 3");
  SimDesign d;
  d.id = id;
  if (id == 3) {
    d.sigma2 = 5e-5;
    d.tau2 = 0;
  }
  return d;
}

double true_f2(double x) {
  return 0.05 + 0.05 * std::sin(1.8 * std::numbers::pi * (x - 1.0) / 99.0);
}

double true_f1(double x) { return true_f2(x) - 0.1; }

Matrix true_curves(const Vector& x) {
  Matrix out(x.size(), 2);
  for (Index i = 0; i < x.size(); ++i) {
    out(i, 1) = true_f2(x[i]);
    out(i, 0) = out(i, 1) - 0.1;
  }
  return out;
}

SimData generate_dataset(const SimDesign& design, std::uint64_t seed, std::uint64_t stream) {
  design.model();  // rejects unknown ids
  const Index N = design.replicates, n = design.points;
  const Vector x = design.grid();
  const Matrix f = true_curves(x);

  SimData out;
  out.data.x = x;
  out.data.y.resize(N, n);
  out.states.resize(N, n);
  out.intercepts = Vector::Zero(N);
  if (design.id == 3) out.data.covariates.assign(1, Matrix(N, n));

  const double sd = std::sqrt(design.sigma2), tau = std::sqrt(design.tau2);
  for (Index k = 0; k < N; ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    switch (design.id) {
      case 1:
        for (Index i = 0; i < n; ++i) out.states(k, i) = unif(rng) < design.p1 ? 0 : 1;
        break;
      case 2:
        out.states(k, 0) = unif(rng) < design.pi1 ? 0 : 1;
        for (Index i = 1; i < n; ++i) {
          const double stay = out.states(k, i - 1) == 0 ? 1 - design.a12 : 1 - design.a21;
          out.states(k, i) = unif(rng) < stay ? out.states(k, i - 1) : 1 - out.states(k, i - 1);
        }
        break;
      case 3:
        for (Index i = 0; i < n; ++i) {
          const double v = normal(rng);
          out.data.covariates[0](k, i) = v;
          const double p_first = 1.0 / (1.0 + std::exp(design.beta0 + design.beta1 * v));
          out.states(k, i) = unif(rng) < p_first ? 0 : 1;
        }
        break;
    }
    if (design.id != 3) out.intercepts[k] = tau * normal(rng);
    for (Index i = 0; i < n; ++i)
      out.data.y(k, i) = f(i, out.states(k, i)) + out.intercepts[k] + sd * normal(rng);
  }
  return out;
}

Theta true_theta(const SimDesign& design, const SplineBasis& basis, const Vector& x) {
  const Matrix B = basis_matrix(basis, x);
  const Matrix f = true_curves(x);
  Theta theta;
  theta.phi = B.colPivHouseholderQr().solve(f).transpose();
  theta.lambdas = Vector::Constant(2, design.lambda);
  const ModelSpec spec = design.model();
  theta.alpha.kind = spec.latent.kind;
  switch (design.id) {
    case 1:
      theta.alpha.p = Vector{{design.p1, 1 - design.p1}};
      break;
    case 2:
      theta.alpha.pi = Vector{{design.pi1, 1 - design.pi1}};
      theta.alpha.A = Matrix{{1 - design.a12, design.a12}, {design.a21, 1 - design.a21}};
      break;
    case 3:
      theta.alpha.beta = Matrix{{design.beta0, design.beta1}};
      break;
  }
  theta.cov.kind = spec.cov.kind;
  theta.cov.sigma2 = design.sigma2;
  if (spec.cov.kind == CovKind::HomogRI) theta.cov.d = design.tau2 / design.sigma2;
  return theta;
}

ReplicationResult run_replication(const SimDesign& design, const SimData& sim) {
  ReplicationResult out;
  try {
    const ModelSpec spec = design.model();
    FitConfig config;
    config.lambdas = Vector::Constant(2, design.lambda);
    config.std_errors = true;
    config.init = InitStrategy::Supplied;
    const SplineBasis basis = build_basis(sim.data.x, default_basis_size(sim.data.points()));
    config.initial = true_theta(design, basis, sim.data.x);
    FitReport fit = ecm_fit(sim.data, spec, config);

    const Matrix truth = true_curves(sim.data.x);
    Matrix curves = fit.curves(sim.data.x);
    const double keep = (curves - truth).squaredNorm();
    const double swap = (curves.rowwise().reverse() - truth).squaredNorm();
    if (swap < keep) {
      fit = permute_states(fit, {1, 0});
      curves = fit.curves(sim.data.x);
      out.swapped = true;
    }
    out.curves = curves;
    out.estimates = [&] {
      const auto& a = fit.theta.alpha;
      switch (a.kind) {
        case LatentKind::Iid: return Vector(a.p.head(1));
        case LatentKind::Markov: return Vector{{a.pi[0], a.A(0, 1), a.A(1, 0)}};
        case LatentKind::Covariate: return Vector(a.beta.row(0).transpose());
      }
      return Vector();
    }();
    out.se = fit.std_errors ? fit.std_errors->se
                            : Vector::Constant(out.estimates.size(), std::nan(""));
    out.sigma2 = fit.theta.cov.sigma2;
    out.tau2 = fit.theta.cov.kind == CovKind::HomogRI ? fit.theta.cov.d * fit.theta.cov.sigma2 : 0.0;
    out.iterations = fit.iterations;
    out.converged = fit.converged;
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

namespace {

ParameterSummary summarise(const std::string& name, double truth, const std::vector<double>& est,
                           const std::vector<double>& se) {
  ParameterSummary s;
  s.name = name;
  s.truth = truth;
  const double m = static_cast<double>(est.size());
  if (est.empty()) {
    s.mean = s.sd = s.mean_se = std::nan("");
    return s;
  }
  double sum = 0;
  for (double v : est) sum += v;
  s.mean = sum / m;
  double ss = 0;
  for (double v : est) ss += (v - s.mean) * (v - s.mean);
  s.sd = est.size() > 1 ? std::sqrt(ss / (m - 1)) : 0.0;

  double se_sum = 0;
  int c90 = 0, c95 = 0;
  for (std::size_t r = 0; r < se.size(); ++r) {
    if (!std::isfinite(se[r])) continue;
    ++s.se_count;
    se_sum += se[r];
    const double dev = std::abs(est[r] - truth);
    c90 += dev <= kZ90 * se[r];
    c95 += dev <= kZ95 * se[r];
  }
  if (s.se_count > 0) {
    s.mean_se = se_sum / s.se_count;
    s.coverage90 = 100.0 * c90 / s.se_count;
    s.coverage95 = 100.0 * c95 / s.se_count;
  } else {
    s.mean_se = std::nan("");
  }
  return s;
}

}  // namespace

StudyReport run_study(const SimDesign& design, int threads) {
  const ModelSpec spec = design.model();
  const int R = design.replications;
  std::vector<ReplicationResult> runs(static_cast<std::size_t>(std::max(R, 0)));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < R; r = next++)
      runs[r] = run_replication(design, generate_dataset(design, design.seed, static_cast<std::uint64_t>(r) + 1));
  };
  const int workers = std::clamp(threads, 1, std::max(R, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  StudyReport report;
  report.design = design.id;
  report.replications = R;
  report.x = design.grid();
  report.truth = true_curves(report.x);
  report.emse = Matrix::Zero(design.points, 2);

  std::vector<std::string> names;
  Vector truth;
  switch (spec.latent.kind) {
    case LatentKind::Iid: names = {"p1"}; truth = Vector{{design.p1}}; break;
    case LatentKind::Markov:
      names = {"pi1", "a12", "a21"};
      truth = Vector{{design.pi1, design.a12, design.a21}};
      break;
    case LatentKind::Covariate:
      names = {"beta0", "beta1"};
      truth = Vector{{design.beta0, design.beta1}};
      break;
  }
  std::vector<std::vector<double>> est(names.size()), se(names.size());
  std::vector<double> s2, t2;
  int ok = 0;
  for (int r = 0; r < R; ++r) {
    const auto& run = runs[r];
    if (!run.ok) {
      ++report.failures;
      report.failure_messages.push_back("replication " + std::to_string(r + 1) + ": " + run.error);
      continue;
    }
    ++ok;
    report.emse += (run.curves - report.truth).array().square().matrix();
    for (std::size_t c = 0; c < names.size(); ++c) {
      est[c].push_back(run.estimates[c]);
      se[c].push_back(run.se[c]);
    }
    s2.push_back(run.sigma2);
    t2.push_back(run.tau2);
  }
  if (ok > 0) report.emse /= ok;
  for (std::size_t c = 0; c < names.size(); ++c)
    report.alpha.push_back(summarise(names[c], truth[c], est[c], se[c]));
  report.covariance.push_back(summarise("sigma2", design.sigma2, s2, {}));
  if (spec.cov.kind == CovKind::HomogRI)
    report.covariance.push_back(summarise("tau2", design.tau2, t2, {}));
  report.runs = std::move(runs);
  return report;
}

}  // namespace snr
