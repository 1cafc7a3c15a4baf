#include "snr/io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

namespace snr {

// -- small helpers --------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot move output into '" + path + "'");
  }
}

namespace {

json vec(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json mat(const Matrix& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) out.push_back(vec(m.row(r).transpose()));
  return out;
}

double num(const json& j) {
  if (j.is_null()) return std::nan("");
  if (!j.is_number()) throw Error(ErrorCode::ParseError, "expected a number, got " + j.dump());
  return j.get<double>();
}

Vector read_vec(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "expected an array, got " + j.dump());
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = num(j[i]);
  return v;
}

Matrix read_mat(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "expected an array of rows");
  if (j.empty()) return Matrix();
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j[0].size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Vector row = read_vec(j[static_cast<std::size_t>(r)]);
    if (row.size() != cols) throw Error(ErrorCode::ParseError, "ragged matrix");
    m.row(r) = row.transpose();
  }
  return m;
}

const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name))
    throw Error(ErrorCode::ParseError, std::string("missing field '") + name + "'");
  return j.at(name);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

// -- datasets -----------------------------------------------------------------

Dataset parse_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "row 1: empty input");
  auto header = split(line);
  for (auto& h : header) h = trim(h);
  const std::vector<std::string> required{"replicate", "point", "x", "y"};
  if (header.size() < 4 || !std::equal(required.begin(), required.end(), header.begin()))
    throw Error(ErrorCode::ParseError, "row 1: header must start with replicate,point,x,y");
  const std::size_t M = header.size() - 4;

  struct Row {
    long rep, point;
    double x, y;
    std::vector<double> v;
    long line;
  };
  std::vector<Row> rows;
  long row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    const auto fail = [&](const std::string& what) {
      return Error(ErrorCode::ParseError, "row " + std::to_string(row_no) + ": " + what);
    };
    if (cells.size() != header.size())
      throw fail("expected " + std::to_string(header.size()) + " fields, found " +
                 std::to_string(cells.size()));
    for (auto& c : cells) c = trim(c);
    Row r;
    r.line = row_no;
    if (!parse_number(cells[0], r.rep) || r.rep < 1) throw fail("replicate must be a positive integer");
    if (!parse_number(cells[1], r.point) || r.point < 1) throw fail("point must be a positive integer");
    if (!parse_number(cells[2], r.x) || !std::isfinite(r.x)) throw fail("x is not a finite number");
    if (!parse_number(cells[3], r.y) || !std::isfinite(r.y)) throw fail("y is not a finite number");
    r.v.resize(M);
    for (std::size_t m = 0; m < M; ++m)
      if (!parse_number(cells[4 + m], r.v[m]) || !std::isfinite(r.v[m]))
        throw fail(header[4 + m] + " is not a finite number");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error(ErrorCode::ParseError, "no data rows");

  long N = 0, n = 0;
  for (const auto& r : rows) {
    N = std::max(N, r.rep);
    n = std::max(n, r.point);
  }
  Dataset data;
  data.y.resize(N, n);
  data.x.resize(n);
  data.covariates.assign(M, Matrix(N, n));
  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(N, n);
  std::vector<bool> x_set(n, false);
  for (const auto& r : rows) {
    const Index k = r.rep - 1, i = r.point - 1;
    if (seen(k, i))
      throw Error(ErrorCode::ParseError, "row " + std::to_string(r.line) + ": duplicate replicate " +
                                             std::to_string(r.rep) + " point " + std::to_string(r.point));
    seen(k, i) = 1;
    if (!x_set[i]) {
      data.x[i] = r.x;
      x_set[i] = true;
    } else if (std::abs(data.x[i] - r.x) > 1e-9) {
      throw Error(ErrorCode::XInconsistent, "row " + std::to_string(r.line) + ": x for point " +
                                                std::to_string(r.point) + " differs across replicates");
    }
    data.y(k, i) = r.y;
    for (std::size_t m = 0; m < M; ++m) data.covariates[m](k, i) = r.v[m];
  }
  for (Index k = 0; k < N; ++k)
    for (Index i = 0; i < n; ++i)
      if (!seen(k, i))
        throw Error(ErrorCode::ParseError, "missing replicate " + std::to_string(k + 1) + " point " +
                                               std::to_string(i + 1));
  validate_dataset(data);
  return data;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return parse_dataset_csv(in);
}

std::string dataset_csv(const Dataset& data) {
  std::ostringstream out;
  out << "replicate,point,x,y";
  for (Index m = 0; m < data.covariate_count(); ++m) out << ",v" << m + 1;
  out << '\n';
  for (Index k = 0; k < data.replicates(); ++k)
    for (Index i = 0; i < data.points(); ++i) {
      out << k + 1 << ',' << i + 1 << ',' << format_double(data.x[i]) << ','
          << format_double(data.y(k, i));
      for (const auto& v : data.covariates) out << ',' << format_double(v(k, i));
      out << '\n';
    }
  return out.str();
}

// -- parameters ---------------------------------------------------------------

json to_json(const LatentParams& alpha) {
  json j;
  j["kind"] = std::string(to_string(alpha.kind));
  switch (alpha.kind) {
    case LatentKind::Iid: j["p"] = vec(alpha.p); break;
    case LatentKind::Markov:
      j["pi"] = vec(alpha.pi);
      j["A"] = mat(alpha.A);
      break;
    case LatentKind::Covariate: j["beta"] = mat(alpha.beta); break;
  }
  return j;
}

LatentParams latent_params_from_json(const json& j) {
  LatentParams a;
  a.kind = parse_latent_kind(field(j, "kind").get<std::string>());
  switch (a.kind) {
    case LatentKind::Iid: a.p = read_vec(field(j, "p")); break;
    case LatentKind::Markov:
      a.pi = read_vec(field(j, "pi"));
      a.A = read_mat(field(j, "A"));
      break;
    case LatentKind::Covariate: {
      const json& b = field(j, "beta");
      a.beta = read_mat(b);
      break;
    }
  }
  return a;
}

json to_json(const CovParams& cov) {
  json j;
  j["kind"] = std::string(to_string(cov.kind));
  switch (cov.kind) {
    case CovKind::IsoDiag: j["sigma2"] = cov.sigma2; break;
    case CovKind::StateDiag: j["state_sigma2"] = vec(cov.state_sigma2); break;
    case CovKind::Unrestricted: j["V"] = mat(cov.V); break;
    case CovKind::HomogRI:
      j["sigma2"] = cov.sigma2;
      j["d"] = cov.d;
      j["tau2"] = cov.d * cov.sigma2;
      break;
    case CovKind::NonhomogRI:
      j["sigma2"] = cov.sigma2;
      j["d1"] = cov.d1;
      j["d2"] = cov.d2;
      j["tau1_2"] = cov.d1 * cov.sigma2;
      j["tau2_2"] = cov.d2 * cov.sigma2;
      break;
  }
  return j;
}

CovParams cov_params_from_json(const json& j) {
  CovParams c;
  c.kind = parse_cov_kind(field(j, "kind").get<std::string>());
  switch (c.kind) {
    case CovKind::IsoDiag: c.sigma2 = num(field(j, "sigma2")); break;
    case CovKind::StateDiag: c.state_sigma2 = read_vec(field(j, "state_sigma2")); break;
    case CovKind::Unrestricted: c.V = read_mat(field(j, "V")); break;
    case CovKind::HomogRI:
      c.sigma2 = num(field(j, "sigma2"));
      c.d = num(field(j, "d"));
      break;
    case CovKind::NonhomogRI:
      c.sigma2 = num(field(j, "sigma2"));
      c.d1 = num(field(j, "d1"));
      c.d2 = num(field(j, "d2"));
      break;
  }
  return c;
}

json to_json(const Theta& theta) {
  json j;
  j["phi"] = mat(theta.phi);
  j["lambdas"] = vec(theta.lambdas);
  j["alpha"] = to_json(theta.alpha);
  j["covariance"] = to_json(theta.cov);
  return j;
}

Theta theta_from_json(const json& j) {
  Theta t;
  t.phi = read_mat(field(j, "phi"));
  if (j.contains("lambdas")) t.lambdas = read_vec(j.at("lambdas"));
  t.alpha = latent_params_from_json(field(j, "alpha"));
  t.cov = cov_params_from_json(field(j, "covariance"));
  return t;
}

// -- configuration ------------------------------------------------------------

RunConfig parse_config(const json& j) {
  try {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "config must be a JSON object");
    static const std::vector<std::string> known{"latent", "covariance", "lambdas", "K",    "tol",
                                                "max_iter", "seed",   "enumeration_cap", "init",
                                                "std_errors", "path", "cv"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw Error(ErrorCode::ParseError, "unknown config field '" + it.key() + "'");

    RunConfig rc;
    const json& latent = field(j, "latent");
    rc.spec.latent.kind = parse_latent_kind(field(latent, "kind").get<std::string>());
    rc.spec.latent.states = field(latent, "J").get<int>();
    rc.spec.cov.kind = parse_cov_kind(field(field(j, "covariance"), "kind").get<std::string>());

    if (j.contains("lambdas")) {
      const json& l = j.at("lambdas");
      if (l.is_string()) {
        if (l.get<std::string>() != "cv")
          throw Error(ErrorCode::ParseError, "lambdas must be an array, a number or \"cv\"");
        rc.cv_lambdas = true;
      } else if (l.is_number()) {
        rc.fit.lambdas = Vector::Constant(1, l.get<double>());
      } else {
        rc.fit.lambdas = read_vec(l);
      }
    }
    if (j.contains("K")) rc.fit.K = j.at("K").get<int>();
    if (j.contains("tol")) rc.fit.tol = j.at("tol").get<double>();
    if (j.contains("max_iter")) rc.fit.max_iter = j.at("max_iter").get<int>();
    if (j.contains("seed")) rc.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("enumeration_cap")) rc.fit.enumeration_cap = j.at("enumeration_cap").get<std::uint64_t>();
    if (j.contains("std_errors")) rc.fit.std_errors = j.at("std_errors").get<bool>();
    if (j.contains("path")) {
      const auto p = j.at("path").get<std::string>();
      if (p == "auto") rc.fit.path = EStepPath::Auto;
      else if (p == "general") rc.fit.path = EStepPath::General;
      else throw Error(ErrorCode::ParseError, "path must be \"auto\" or \"general\"");
    }
    if (j.contains("init")) {
      const json& init = j.at("init");
      const auto strategy = field(init, "strategy").get<std::string>();
      if (strategy == "quantile-split") {
        rc.fit.init = InitStrategy::QuantileSplit;
      } else if (strategy == "supplied") {
        rc.fit.init = InitStrategy::Supplied;
        try {
          rc.fit.initial = theta_from_json(field(init, "theta"));
        } catch (const Error& e) {
          throw Error(ErrorCode::BadInit, std::string("supplied theta: ") + e.what());
        }
      } else {
        throw Error(ErrorCode::ParseError, "init.strategy must be \"quantile-split\" or \"supplied\"");
      }
    }
    if (j.contains("cv")) {
      const json& c = j.at("cv");
      if (c.contains("grid")) {
        const Vector g = read_vec(c.at("grid"));
        rc.cv.grid.assign(g.data(), g.data() + g.size());
      }
      if (c.contains("outer_max_iter")) rc.cv.outer_max_iter = c.at("outer_max_iter").get<int>();
      if (c.contains("outer_tol")) rc.cv.outer_tol = c.at("outer_tol").get<double>();
    }
    if (rc.fit.tol <= 0 || rc.fit.max_iter < 1)
      throw Error(ErrorCode::ParseError, "tol must be positive and max_iter at least 1");
    return rc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
}

RunConfig read_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, "config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

// -- reports ------------------------------------------------------------------

namespace {

json information_json(const InformationMatrix& info) {
  json j;
  j["names"] = info.names;
  j["estimates"] = vec(info.estimates);
  j["se"] = vec(info.se);
  j["information"] = mat(info.information);
  j["covariance"] = mat(info.covariance);
  return j;
}

InformationMatrix information_from_json(const json& j) {
  InformationMatrix info;
  info.names = field(j, "names").get<std::vector<std::string>>();
  info.estimates = read_vec(field(j, "estimates"));
  info.se = read_vec(field(j, "se"));
  info.information = read_mat(field(j, "information"));
  info.covariance = read_mat(field(j, "covariance"));
  return info;
}

json tables_json(const std::vector<Matrix>& tables) {
  json out = json::array();
  for (const auto& t : tables) out.push_back(mat(t));
  return out;
}

std::vector<Matrix> tables_from_json(const json& j) {
  std::vector<Matrix> out;
  for (const auto& t : j) out.push_back(read_mat(t));
  return out;
}

}  // namespace

json to_json(const FitReport& fit, const ModelSpec& spec, const Dataset* data) {
  json j;
  j["model"] = {{"latent", std::string(to_string(spec.latent.kind))},
                {"covariance", std::string(to_string(spec.cov.kind))},
                {"J", spec.latent.states}};
  j["basis"] = {{"degree", 3}, {"knots", vec(fit.basis.knots())}};
  j["theta"] = to_json(fit.theta);
  if (data) {
    j["x"] = vec(data->x);
    j["curves"] = mat(fit.curves(data->x));
  }
  json post;
  post["marginal"] = tables_json(fit.posteriors.marginal);
  post["pairwise"] = tables_json(fit.posteriors.pairwise);
  post["loglik"] = vec(fit.posteriors.loglik);
  if (fit.posteriors.has_joint()) post["joint"] = mat(fit.posteriors.joint);
  j["posteriors"] = post;
  j["trace"] = fit.trace;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["notes"] = fit.notes;
  j["std_errors"] = fit.std_errors ? information_json(*fit.std_errors) : json(nullptr);
  j["std_errors_note"] = fit.std_errors_note;
  return j;
}

FitReport fit_report_from_json(const json& j) {
  try {
    FitReport fit;
    fit.basis = SplineBasis(read_vec(field(field(j, "basis"), "knots")));
    fit.theta = theta_from_json(field(j, "theta"));
    const json& post = field(j, "posteriors");
    fit.posteriors.marginal = tables_from_json(field(post, "marginal"));
    fit.posteriors.pairwise = tables_from_json(field(post, "pairwise"));
    fit.posteriors.loglik = read_vec(field(post, "loglik"));
    if (post.contains("joint")) fit.posteriors.joint = read_mat(post.at("joint"));
    for (const auto& v : field(j, "trace")) fit.trace.push_back(num(v));
    fit.iterations = field(j, "iterations").get<int>();
    fit.converged = field(j, "converged").get<bool>();
    fit.notes = field(j, "notes").get<std::vector<std::string>>();
    const json& se = field(j, "std_errors");
    if (!se.is_null()) fit.std_errors = information_from_json(se);
    fit.std_errors_note = field(j, "std_errors_note").get<std::string>();
    return fit;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("fit report: ") + e.what());
  }
}

json to_json(const CvResult& cv) {
  json j;
  j["grid"] = cv.grid;
  j["selected_lambdas"] = vec(cv.lambdas);
  j["stabilized"] = cv.stabilized;
  j["direct_fallbacks"] = cv.direct_fallbacks;
  json iters = json::array();
  for (const auto& it : cv.iterations)
    iters.push_back({{"lambdas_in", vec(it.lambdas_in)},
                     {"scores", mat(it.scores)},
                     {"lambdas_out", vec(it.lambdas_out)}});
  j["iterations"] = iters;
  return j;
}

namespace {

json summary_json(const ParameterSummary& s) {
  return {{"name", s.name},           {"truth", s.truth},
          {"mean", s.mean},           {"sd", s.sd},
          {"mean_se", s.mean_se},     {"coverage90", s.coverage90},
          {"coverage95", s.coverage95}, {"se_count", s.se_count}};
}

}  // namespace

json to_json(const StudyReport& report) {
  json j;
  j["design"] = report.design;
  j["replications"] = report.replications;
  j["failures"] = report.failures;
  j["failure_messages"] = report.failure_messages;
  json alpha = json::array(), cov = json::array();
  for (const auto& s : report.alpha) alpha.push_back(summary_json(s));
  for (const auto& s : report.covariance) cov.push_back(summary_json(s));
  j["alpha"] = alpha;
  j["covariance"] = cov;
  j["x"] = vec(report.x);
  j["truth"] = mat(report.truth);
  j["emse"] = mat(report.emse);
  json runs = json::array();
  for (const auto& r : report.runs) {
    json e{{"ok", r.ok}, {"error", r.error}};
    if (r.ok) {
      e["estimates"] = vec(r.estimates);
      e["se"] = vec(r.se);
      e["sigma2"] = r.sigma2;
      e["tau2"] = r.tau2;
      e["iterations"] = r.iterations;
      e["converged"] = r.converged;
      e["swapped"] = r.swapped;
    }
    runs.push_back(e);
  }
  j["runs"] = runs;
  return j;
}

// -- CSV tables ---------------------------------------------------------------

std::string curves_csv(const FitReport& fit, const Vector& x) {
  const Matrix F = fit.curves(x);
  std::ostringstream out;
  out << "x";
  for (Index j = 0; j < F.cols(); ++j) out << ",f" << j + 1 << "_hat";
  out << '\n';
  for (Index i = 0; i < F.rows(); ++i) {
    out << format_double(x[i]);
    for (Index j = 0; j < F.cols(); ++j) out << ',' << format_double(F(i, j));
    out << '\n';
  }
  return out.str();
}

std::string posteriors_csv(const FitReport& fit) {
  std::ostringstream out;
  out << "replicate,point,state,probability\n";
  const auto& m = fit.posteriors.marginal;
  if (m.empty()) return out.str();
  for (Index k = 0; k < m[0].rows(); ++k)
    for (Index i = 0; i < m[0].cols(); ++i)
      for (std::size_t j = 0; j < m.size(); ++j)
        out << k + 1 << ',' << i + 1 << ',' << j + 1 << ',' << format_double(m[j](k, i)) << '\n';
  return out.str();
}

std::string classified_csv(const FitReport& fit) {
  std::ostringstream out;
  out << "replicate,point,state,tie\n";
  const auto& m = fit.posteriors.marginal;
  if (m.empty()) return out.str();
  for (Index k = 0; k < m[0].rows(); ++k)
    for (Index i = 0; i < m[0].cols(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < m.size(); ++j)
        if (m[j](k, i) > m[best](k, i)) best = j;
      bool tie = false;
      for (std::size_t j = 0; j < m.size(); ++j)
        if (j != best && std::abs(m[j](k, i) - m[best](k, i)) <= 1e-12) tie = true;
      out << k + 1 << ',' << i + 1 << ',' << best + 1 << ',' << (tie ? 1 : 0) << '\n';
    }
  return out.str();
}

namespace {

std::string summary_csv(const std::vector<ParameterSummary>& rows, bool with_se) {
  std::ostringstream out;
  out << "parameter,truth,mean,sd";
  if (with_se) out << ",mean_se,coverage90,coverage95,se_count";
  out << '\n';
  for (const auto& s : rows) {
    out << s.name << ',' << format_double(s.truth) << ',' << format_double(s.mean) << ','
        << format_double(s.sd);
    if (with_se)
      out << ',' << format_double(s.mean_se) << ',' << format_double(s.coverage90) << ','
          << format_double(s.coverage95) << ',' << s.se_count;
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string study_alpha_csv(const StudyReport& report) { return summary_csv(report.alpha, true); }

std::string study_covariance_csv(const StudyReport& report) {
  return summary_csv(report.covariance, false);
}

std::string study_emse_csv(const StudyReport& report) {
  std::ostringstream out;
  out << "x,emse_f1,emse_f2\n";
  for (Index i = 0; i < report.x.size(); ++i)
    out << format_double(report.x[i]) << ',' << format_double(report.emse(i, 0)) << ','
        << format_double(report.emse(i, 1)) << '\n';
  return out.str();
}

std::string states_csv(const Eigen::MatrixXi& states) {
  std::ostringstream out;
  out << "replicate,point,state\n";
  for (Index k = 0; k < states.rows(); ++k)
    for (Index i = 0; i < states.cols(); ++i)
      out << k + 1 << ',' << i + 1 << ',' << states(k, i) + 1 << '\n';
  return out.str();
}

}  // namespace snr
