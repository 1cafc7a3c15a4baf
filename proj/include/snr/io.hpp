#ifndef SNR_IO_HPP
#define SNR_IO_HPP

// CSV datasets, JSON configuration and report serialisation.

#include "snr/cv.hpp"
#include "snr/em.hpp"
#include "snr/sim.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>

namespace snr {

using json = nlohmann::json;

// -- datasets -----------------------------------------------------------------

/// Long format with header `replicate,point,x,y[,v1..vM]`. Every
/// (replicate, point) pair must appear once and x must agree across
/// replicates to 1e-9. Errors name the offending CSV row (header = row 1).
Dataset parse_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::string& path);
std::string dataset_csv(const Dataset& data);

// -- configuration --------------------------------------------------------------

struct RunConfig {
  ModelSpec spec;
  FitConfig fit;
  bool cv_lambdas = false;  // "lambdas": "cv"
  CvConfig cv;
  std::uint64_t seed = 0;
};

RunConfig parse_config(const json& j);
RunConfig read_config(const std::string& path);

// -- parameters and reports -----------------------------------------------------

json to_json(const LatentParams& alpha);
json to_json(const CovParams& cov);
json to_json(const Theta& theta);
LatentParams latent_params_from_json(const json& j);
CovParams cov_params_from_json(const json& j);
Theta theta_from_json(const json& j);

/// Full report. With `data`, fitted curves on the grid are included too.
json to_json(const FitReport& fit, const ModelSpec& spec, const Dataset* data = nullptr);
FitReport fit_report_from_json(const json& j);

json to_json(const CvResult& cv);
json to_json(const StudyReport& report);

/// Plot-ready tables.
std::string curves_csv(const FitReport& fit, const Vector& x);
std::string posteriors_csv(const FitReport& fit);
/// Posterior argmax per point; ties go to the lower state and are flagged.
std::string classified_csv(const FitReport& fit);
std::string study_alpha_csv(const StudyReport& report);
std::string study_covariance_csv(const StudyReport& report);
std::string study_emse_csv(const StudyReport& report);
std::string states_csv(const Eigen::MatrixXi& states);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Writes to a temporary file beside `path`, then renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace snr

#endif  // SNR_IO_HPP
