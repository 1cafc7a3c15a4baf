#ifndef SNR_SIM_HPP
#define SNR_SIM_HPP

// Simulation designs 1-3, the Monte-Carlo study driver and its summaries.

#include "snr/em.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace snr {

struct SimDesign {
  int id = 1;
  Index replicates = 100;  // N
  Index points = 10;       // n, equally spaced on [1, 100]
  double p1 = 0.5;                              // design 1
  double pi1 = 0.5, a12 = 0.3, a21 = 0.4;       // design 2
  double beta0 = 2.0, beta1 = 5.0;              // design 3, logit of state 2
  double sigma2 = 1e-5;
  double tau2 = 1e-4;                           // designs 1-2 only
  int replications = 300;
  std::uint64_t seed = 1;
  double lambda = 1e-4;

  Vector grid() const;
  ModelSpec model() const;
};

/// Design defaults; design 3 uses sigma^2 = 5e-5.
SimDesign make_design(int id);

/// Stand-in truth on [1, 100]: f2(x) = 0.05 + 0.05 sin(1.8 pi (x - 1) / 99),
/// which spans [0, 0.1] with one maximum and one minimum; f1 = f2 - 0.1.
double true_f2(double x);
double true_f1(double x);
/// n x 2 matrix (f1, f2) on x.
Matrix true_curves(const Vector& x);

struct SimData {
  Dataset data;
  Eigen::MatrixXi states;  // N x n, 0-based
  Vector intercepts;       // delta_k (zero for design 3)
};

/// Replicate k draws from its own generator seeded by (seed, stream, k), so
/// the order in which replicates are produced does not matter.
SimData generate_dataset(const SimDesign& design, std::uint64_t seed, std::uint64_t stream = 0);

/// Data-generating parameters on `basis` (phi by least squares on the grid).
Theta true_theta(const SimDesign& design, const SplineBasis& basis, const Vector& x);

struct ParameterSummary {
  std::string name;
  double truth = 0;
  double mean = 0;
  double sd = 0;
  double mean_se = 0;     // NaN when no replication has a standard error
  double coverage90 = 0;  // percent of replications with a standard error
  double coverage95 = 0;
  int se_count = 0;
};

struct ReplicationResult {
  bool ok = false;
  std::string error;
  bool swapped = false;
  Matrix curves;     // n x 2 after label alignment
  Vector estimates;  // alpha coordinates
  Vector se;         // NaN where unavailable
  double sigma2 = 0;
  double tau2 = 0;
  int iterations = 0;
  bool converged = false;
};

struct StudyReport {
  int design = 1;
  int replications = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<ParameterSummary> alpha;
  std::vector<ParameterSummary> covariance;  // sigma2 and, for designs 1-2, tau2
  Vector x;
  Matrix truth;  // n x 2
  Matrix emse;   // n x 2
  std::vector<ReplicationResult> runs;
};

inline constexpr double kZ90 = 1.6448536269514722;
inline constexpr double kZ95 = 1.959963984540054;

/// Generates, fits from the truth and scores `replications` data sets.
/// `threads` workers share the replications; results are aggregated in
/// replication order.
StudyReport run_study(const SimDesign& design, int threads = 1);

/// Fits one generated data set from the truth and aligns labels to it.
ReplicationResult run_replication(const SimDesign& design, const SimData& sim);

}  // namespace snr

#endif  // SNR_SIM_HPP
