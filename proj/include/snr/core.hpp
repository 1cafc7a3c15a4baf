#ifndef SNR_CORE_HPP
#define SNR_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace snr {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

enum class ErrorCode {
  GridTooSmall,
  BadK,
  NonIncreasingGrid,
  OutOfDomain,
  EnumerationTooLarge,
  SpecMismatch,
  InvalidParams,
  DegenerateLikelihood,
  NotSPD,
  NonPositiveSigma,
  SingularSystem,
  SingularInformation,
  BoundaryParameter,
  MonotonicityViolation,
  BadInit,
  ParseError,
  XInconsistent,
  Unsupported,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Fatal errors. Non-fatal conditions (ridge fallbacks, stalled optimizers,
// empty states) are recorded as notes on the relevant result instead.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Numerically stable log(sum(exp(v))). Returns -inf when every entry is -inf.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace snr

#endif  // SNR_CORE_HPP
