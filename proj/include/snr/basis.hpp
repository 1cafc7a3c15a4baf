#ifndef SNR_BASIS_HPP
#define SNR_BASIS_HPP

// Clamped cubic B-spline bases, templated on the scalar type.
//
// Evaluation follows the triangular Cox-de Boor scheme: for a point in knot
// span mu only basis functions mu-3..mu are non-zero, and their values and
// derivatives are built up degree by degree.

#include "snr/core.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace snr {

template <typename Scalar>
class BasicSplineBasis {
 public:
  using VectorType = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  static constexpr int degree = 3;
  static constexpr int order = degree + 1;

  BasicSplineBasis() = default;

  /// Takes a full clamped knot vector (boundary knots repeated four times).
  explicit BasicSplineBasis(VectorType knots) : knots_(std::move(knots)) {
    const Index m = knots_.size();
    if (m < 2 * order)
      throw Error(ErrorCode::BadK, "knot vector needs at least 8 entries");
    for (Index i = 1; i < m; ++i)
      if (knots_[i] < knots_[i - 1])
        throw Error(ErrorCode::NonIncreasingGrid, "knot vector must be non-decreasing");
    for (int i = 1; i < order; ++i)
      if (knots_[i] != knots_[0] || knots_[m - 1 - i] != knots_[m - 1])
        throw Error(ErrorCode::BadK, "knot vector must be clamped");
    if (!(knots_[order] > knots_[0]) || !(knots_[m - 1 - order] < knots_[m - 1]))
      throw Error(ErrorCode::BadK, "boundary knots must appear exactly four times");
    if (!(knots_[m - 1] > knots_[0]))
      throw Error(ErrorCode::BadK, "degenerate basis domain");
  }

  const VectorType& knots() const { return knots_; }
  Index size() const { return knots_.size() - order; }
  Scalar lower() const { return knots_[0]; }
  Scalar upper() const { return knots_[knots_.size() - 1]; }
  bool contains(Scalar x) const { return x >= lower() && x <= upper(); }

  /// Span index mu with knots[mu] <= x < knots[mu+1]; the right boundary is
  /// assigned to the last non-empty span.
  Index span(Scalar x) const {
    const Index last = size() - 1;
    if (x >= knots_[last + 1]) return last;
    auto first = knots_.data() + degree;
    auto end = knots_.data() + last + 1;
    return static_cast<Index>(std::upper_bound(first, end, x) - knots_.data()) - 1;
  }

  /// Values (row 0) and first/second derivatives (rows 1, 2) of the four
  /// non-zero basis functions at x, in the order mu-3..mu.
  Eigen::Matrix<Scalar, 3, order> local_derivatives(Index mu, Scalar x) const {
    // ndu holds basis values (upper triangle incl. diagonal) and knot
    // differences (strict lower triangle).
    Eigen::Matrix<Scalar, order, order> ndu;
    std::array<Scalar, order> left{}, right{};
    ndu(0, 0) = Scalar(1);
    for (int j = 1; j <= degree; ++j) {
      left[j] = x - knots_[mu + 1 - j];
      right[j] = knots_[mu + j] - x;
      Scalar saved(0);
      for (int r = 0; r < j; ++r) {
        ndu(j, r) = right[r + 1] + left[j - r];
        const Scalar tmp = ndu(r, j - 1) / ndu(j, r);
        ndu(r, j) = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      ndu(j, j) = saved;
    }

    Eigen::Matrix<Scalar, 3, order> ders;
    for (int j = 0; j <= degree; ++j) ders(0, j) = ndu(j, degree);

    Eigen::Matrix<Scalar, 2, order> a;
    for (int r = 0; r <= degree; ++r) {
      int s1 = 0, s2 = 1;
      a(0, 0) = Scalar(1);
      for (int k = 1; k <= 2; ++k) {
        Scalar d(0);
        const int rk = r - k, pk = degree - k;
        if (r >= k) {
          a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
          d = a(s2, 0) * ndu(rk, pk);
        }
        const int j1 = rk >= -1 ? 1 : -rk;
        const int j2 = (r - 1 <= pk) ? k - 1 : degree - r;
        for (int j = j1; j <= j2; ++j) {
          a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
          d += a(s2, j) * ndu(rk + j, pk);
        }
        if (r <= pk) {
          a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
          d += a(s2, k) * ndu(r, pk);
        }
        ders(k, r) = d;
        std::swap(s1, s2);
      }
    }
    ders.row(1) *= Scalar(degree);
    ders.row(2) *= Scalar(degree * (degree - 1));
    return ders;
  }

  /// Row of derivative `deriv` (0, 1 or 2) of all K basis functions at x.
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> row(Scalar x, int deriv = 0) const {
    if (!contains(x))
      throw Error(ErrorCode::OutOfDomain, "evaluation point outside basis domain");
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> out =
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(size());
    const Index mu = span(x);
    out.segment(mu - degree, order) = local_derivatives(mu, x).row(deriv);
    return out;
  }

 private:
  VectorType knots_;
};

using SplineBasis = BasicSplineBasis<double>;

/// Clamped cubic basis on [x.front(), x.back()] with K-4 interior knots at
/// evenly spaced sample quantiles of x.
template <typename Scalar>
BasicSplineBasis<Scalar> build_basis(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x,
                                     Index K) {
  const Index n = x.size();
  if (n < 4) throw Error(ErrorCode::GridTooSmall, "grid needs at least 4 points");
  for (Index i = 1; i < n; ++i)
    if (!(x[i] > x[i - 1]))
      throw Error(ErrorCode::NonIncreasingGrid, "grid must be strictly increasing");
  if (K < 4 || K > n + 2)
    throw Error(ErrorCode::BadK, "K must lie in [4, n + 2], got " + std::to_string(K));

  const Index interior = K - 4;
  std::vector<Scalar> inner;
  inner.reserve(interior);
  for (Index m = 1; m <= interior; ++m) {
    const Scalar pos = Scalar(m) / Scalar(interior + 1) * Scalar(n - 1);
    const Index lo = static_cast<Index>(std::floor(pos));
    const Scalar frac = pos - Scalar(lo);
    inner.push_back(lo + 1 < n ? x[lo] + frac * (x[lo + 1] - x[lo]) : x[n - 1]);
  }
  // Duplicates cannot arise from a strictly increasing grid, but keep knots
  // strictly ordered anyway by moving repeats to the midpoint of their
  // neighbours.
  for (std::size_t m = 1; m < inner.size(); ++m) {
    if (inner[m] <= inner[m - 1]) {
      const Scalar next = m + 1 < inner.size() ? inner[m + 1] : x[n - 1];
      inner[m] = (inner[m - 1] + next) / Scalar(2);
    }
  }

  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> knots(K + 4);
  for (int i = 0; i < 4; ++i) {
    knots[i] = x[0];
    knots[K + i] = x[n - 1];
  }
  for (Index m = 0; m < interior; ++m) knots[4 + m] = inner[m];
  return BasicSplineBasis<Scalar>(std::move(knots));
}

/// n x K matrix of basis values (deriv = 0) or derivatives at the points x.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> basis_matrix(
    const BasicSplineBasis<Scalar>& basis, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x,
    int deriv = 0) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(x.size(), basis.size());
  for (Index i = 0; i < x.size(); ++i) out.row(i) = basis.row(x[i], deriv);
  return out;
}

/// R_{uv} = int b_u''(x) b_v''(x) dx. Second derivatives are linear on each
/// knot interval, so two-point Gauss-Legendre per interval is exact.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> penalty_matrix(
    const BasicSplineBasis<Scalar>& basis) {
  using std::sqrt;
  const Index K = basis.size();
  const auto& t = basis.knots();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> R =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(K, K);
  const Scalar offset = Scalar(1) / sqrt(Scalar(3));
  for (Index mu = 3; mu < K; ++mu) {
    const Scalar a = t[mu], b = t[mu + 1];
    if (!(b > a)) continue;
    const Scalar half = (b - a) / Scalar(2), mid = (a + b) / Scalar(2);
    for (const Scalar node : {mid - half * offset, mid + half * offset}) {
      const Eigen::Matrix<Scalar, 1, 4> d2 = basis.local_derivatives(mu, node).row(2);
      R.block(mu - 3, mu - 3, 4, 4).noalias() += half * d2.transpose() * d2;
    }
  }
  return (R + R.transpose()) / Scalar(2);
}

}  // namespace snr

#endif  // SNR_BASIS_HPP
