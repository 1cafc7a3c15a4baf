// Command-line front end: fit, cv, classify, simulate, simstudy.

#include "snr/cv.hpp"
#include "snr/em.hpp"
#include "snr/io.hpp"
#include "snr/sim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

namespace fs = std::filesystem;
using namespace snr;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MonotonicityViolation:
    case ErrorCode::DegenerateLikelihood:
    case ErrorCode::NotSPD:
    case ErrorCode::NonPositiveSigma:
    case ErrorCode::SingularSystem:
    case ErrorCode::SingularInformation:
      return kExitNumerical;
    default:
      return kExitInput;
  }
}

void write_error(const std::string& out_dir, const std::string& code, const std::string& message,
                 int exit_code) {
  std::cerr << "error [" << code << "]: " << message << '\n';
  if (out_dir.empty()) return;
  try {
    fs::create_directories(out_dir);
    json j{{"error", code}, {"message", message}, {"exit_code", exit_code}};
    write_file_atomic((fs::path(out_dir) / "error.json").string(), j.dump(2) + "\n");
  } catch (const std::exception&) {
    // The message already went to stderr.
  }
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path))
    throw Error(ErrorCode::IoError, std::string(what) + " '" + path + "' is not a readable file");
}

void prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorCode::IoError, "cannot create output directory '" + dir + "'");
}

std::string in_dir(const std::string& dir, const char* name) {
  return (fs::path(dir) / name).string();
}

void write_fit_outputs(const std::string& out, const FitReport& fit, const ModelSpec& spec,
                       const Dataset& data) {
  write_file_atomic(in_dir(out, "fit.json"), to_json(fit, spec, &data).dump(2) + "\n");
  write_file_atomic(in_dir(out, "curves.csv"), curves_csv(fit, data.x));
  write_file_atomic(in_dir(out, "posteriors.csv"), posteriors_csv(fit));
  write_file_atomic(in_dir(out, "classified.csv"), classified_csv(fit));
}

// "lo:hi:count" (log-spaced) or a comma-separated list.
std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> grid;
  const auto fail = [&] { return Error(ErrorCode::ParseError, "bad --grid '" + spec + "'"); };
  try {
    if (spec.find(':') != std::string::npos) {
      const auto a = spec.find(':'), b = spec.find(':', a + 1);
      if (b == std::string::npos) throw fail();
      const double lo = std::stod(spec.substr(0, a)), hi = std::stod(spec.substr(a + 1, b - a - 1));
      const int count = std::stoi(spec.substr(b + 1));
      if (!(lo > 0) || !(hi >= lo) || count < 1) throw fail();
      for (int g = 0; g < count; ++g)
        grid.push_back(count == 1 ? lo
                                  : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * g / (count - 1)));
    } else {
      std::size_t pos = 0;
      while (pos <= spec.size()) {
        const auto next = spec.find(',', pos);
        grid.push_back(std::stod(spec.substr(pos, next - pos)));
        if (next == std::string::npos) break;
        pos = next + 1;
      }
    }
  } catch (const std::logic_error&) {
    throw fail();
  }
  return grid;
}

struct Options {
  std::string data, config, out, fit, grid;
  int design = 1;
  int reps = 300;
  std::uint64_t seed = 1;
  int threads = 0;
  std::optional<double> sigma2;
};

SimDesign design_from(const Options& o) {
  SimDesign design = make_design(o.design);
  if (o.sigma2) {
    if (!(*o.sigma2 > 0)) throw Error(ErrorCode::InvalidParams, "--sigma2 must be positive");
    design.sigma2 = *o.sigma2;
  }
  return design;
}

int run_fit(const Options& o) {
  require_file(o.data, "data");
  require_file(o.config, "config");
  prepare_out(o.out);
  const Dataset data = read_dataset_csv(o.data);
  RunConfig rc = read_config(o.config);
  if (rc.cv_lambdas) {
    const CvResult cv = select_lambdas(data, rc.spec, rc.fit, rc.cv);
    write_file_atomic(in_dir(o.out, "cv.json"), to_json(cv).dump(2) + "\n");
    write_fit_outputs(o.out, cv.fit, rc.spec, data);
    return 0;
  }
  const FitReport fit = ecm_fit(data, rc.spec, rc.fit);
  write_fit_outputs(o.out, fit, rc.spec, data);
  return 0;
}

int run_cv(const Options& o) {
  require_file(o.data, "data");
  require_file(o.config, "config");
  prepare_out(o.out);
  const Dataset data = read_dataset_csv(o.data);
  RunConfig rc = read_config(o.config);
  if (!o.grid.empty()) rc.cv.grid = parse_grid(o.grid);
  const CvResult cv = select_lambdas(data, rc.spec, rc.fit, rc.cv);
  write_file_atomic(in_dir(o.out, "cv.json"), to_json(cv).dump(2) + "\n");
  write_fit_outputs(o.out, cv.fit, rc.spec, data);
  return 0;
}

int run_classify(const Options& o) {
  require_file(o.fit, "fit report");
  if (!o.data.empty()) require_file(o.data, "data");
  prepare_out(o.out);
  json j;
  try {
    j = json::parse(read_file(o.fit));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("fit report: ") + e.what());
  }
  FitReport fit = fit_report_from_json(j);
  if (!o.data.empty()) {
    // Posteriors for new data at the stored parameters.
    const Dataset data = read_dataset_csv(o.data);
    ModelSpec spec;
    spec.latent.kind = fit.theta.alpha.kind;
    spec.latent.states = fit.theta.states();
    spec.cov.kind = fit.theta.cov.kind;
    validate(data, spec.latent, spec.cov);
    FitContext ctx(data, spec, fit.basis);
    fit.posteriors = ctx.posteriors(fit.theta);
  }
  write_file_atomic(in_dir(o.out, "posteriors.csv"), posteriors_csv(fit));
  write_file_atomic(in_dir(o.out, "classified.csv"), classified_csv(fit));
  return 0;
}

int run_simulate(const Options& o) {
  prepare_out(o.out);
  const SimDesign design = design_from(o);
  const SimData sim = generate_dataset(design, o.seed);
  write_file_atomic(in_dir(o.out, "data.csv"), dataset_csv(sim.data));
  write_file_atomic(in_dir(o.out, "states.csv"), states_csv(sim.states));
  return 0;
}

int run_simstudy(const Options& o) {
  if (o.reps < 1) throw Error(ErrorCode::InvalidParams, "--reps must be at least 1");
  prepare_out(o.out);
  SimDesign design = design_from(o);
  design.replications = o.reps;
  design.seed = o.seed;
  const int threads = o.threads > 0 ? o.threads
                                    : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const StudyReport report = run_study(design, threads);
  write_file_atomic(in_dir(o.out, "study.json"), to_json(report).dump(2) + "\n");
  write_file_atomic(in_dir(o.out, "table_alpha.csv"), study_alpha_csv(report));
  write_file_atomic(in_dir(o.out, "table_covariance.csv"), study_covariance_csv(report));
  write_file_atomic(in_dir(o.out, "emse.csv"), study_emse_csv(report));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Switching nonparametric regression for multi-curve data"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--threads", o.threads, "worker threads (default: hardware concurrency)")
      ->check(CLI::NonNegativeNumber);

  auto* fit = app.add_subcommand("fit", "penalised ECM fit");
  fit->add_option("--data", o.data, "long-format CSV")->required();
  fit->add_option("--config", o.config, "model config JSON")->required();
  fit->add_option("--out", o.out, "output directory")->required();

  auto* cv = app.add_subcommand("cv", "cross-validated smoothing parameters, then fit");
  cv->add_option("--data", o.data, "long-format CSV")->required();
  cv->add_option("--config", o.config, "model config JSON")->required();
  cv->add_option("--grid", o.grid, "lo:hi:count (log-spaced) or comma-separated values");
  cv->add_option("--out", o.out, "output directory")->required();

  auto* classify = app.add_subcommand("classify", "posterior state classification");
  classify->add_option("--fit", o.fit, "fit.json from a previous fit")->required();
  classify->add_option("--data", o.data, "classify this data instead of the fitted data");
  classify->add_option("--out", o.out, "output directory")->required();

  auto* simulate = app.add_subcommand("simulate", "generate one simulated data set");
  simulate->add_option("--design", o.design, "design 1, 2 or 3")->required()->check(CLI::Range(1, 3));
  simulate->add_option("--seed", o.seed, "seed");
  simulate->add_option("--sigma2", o.sigma2, "override the design's noise variance");
  simulate->add_option("--out", o.out, "output directory")->required();

  auto* simstudy = app.add_subcommand("simstudy", "Monte-Carlo study of one design");
  simstudy->add_option("--design", o.design, "design 1, 2 or 3")->required()->check(CLI::Range(1, 3));
  simstudy->add_option("--reps", o.reps, "replications");
  simstudy->add_option("--seed", o.seed, "seed");
  simstudy->add_option("--sigma2", o.sigma2, "override the design's noise variance");
  simstudy->add_option("--out", o.out, "output directory")->required();
  simstudy->add_option("--threads", o.threads, "worker threads")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*fit) return run_fit(o);
    if (*cv) return run_cv(o);
    if (*classify) return run_classify(o);
    if (*simulate) return run_simulate(o);
    if (*simstudy) return run_simstudy(o);
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    write_error(o.out, std::string(to_string(e.code())), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    write_error(o.out, "InternalError", e.what(), kExitNumerical);
    return kExitNumerical;
  }
  return kExitInput;
}
