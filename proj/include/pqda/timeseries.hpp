#pragma once

#include <cstddef>
#include <stdexcept>

#include "pqda/matrix.hpp"

namespace pqda {

// Ordered observations, one row per record. Row n is the state at time
// start_time + (n + 1) * delta_t.
struct TimeSeries {
  Matrix observations;
  double delta_t = 0.0;
  double start_time = 0.0;
  std::size_t train_end = 0;

  std::size_t length() const { return observations.rows(); }
  std::size_t dim() const { return observations.cols(); }

  void validate() const {
    if (length() > 0 && !(train_end > 0 && train_end < length())) {
      throw std::invalid_argument("TimeSeries: train_end must lie strictly inside the series");
    }
  }
};

} // namespace pqda
