#ifndef SNR_STATES_HPP
#define SNR_STATES_HPP

#include "snr/core.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace snr {

/// One state vector s (0-based states), viewed in place.
using StateView = std::span<const std::uint8_t>;

/// All J^n state vectors in canonical order: index = sum_i s_i J^i, so the
/// first position varies fastest (lexicographic with state 1 fastest).
class StateSpace {
 public:
  StateSpace(int states, Index points);

  int states() const { return states_; }
  Index points() const { return points_; }
  Index size() const { return size_; }

  StateView operator[](Index idx) const {
    return {table_.data() + idx * points_, static_cast<std::size_t>(points_)};
  }

  Index index_of(StateView s) const;

  /// n_{s,j}: number of positions in state j.
  static std::vector<int> counts(StateView s, int J);
  /// n_{s,lj}: number of transitions l -> j, as a flattened J x J table.
  static std::vector<int> transitions(StateView s, int J);

 private:
  int states_;
  Index points_;
  Index size_;
  std::vector<std::uint8_t> table_;
};

}  // namespace snr

#endif  // SNR_STATES_HPP
