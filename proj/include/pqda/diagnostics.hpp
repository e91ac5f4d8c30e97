#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pqda/autodiff.hpp"
#include "pqda/dgfm.hpp"
#include "pqda/matrix.hpp"
#include "pqda/parallel.hpp"
#include "pqda/timeseries.hpp"

namespace pqda::diagnostics {

// Predictive draws (m_pred x K) for one time point and the value observed there.
struct ForecastRecord {
  Matrix draws;
  std::vector<double> observation;
};

struct MetricsReport {
  double calibration_error = 0.0;
  double nrmse = 0.0;
  double r2 = 0.0;
  std::size_t episode_index = 0;
  std::size_t range_begin = 0;
  std::size_t range_end = 0;
};

inline constexpr std::size_t calibration_grid_size = 100;

/// Credible level j / (grid + 1), j = 1..grid.
double calibration_level(std::size_t j);

/// Linear interpolation between order statistics of an ascending sample.
double empirical_quantile(std::span<const double> sorted, double prob);

/// Mean over components of the median (over the level grid) of
/// |empirical coverage of the central interval - nominal level|.
double calibration_error(std::span<const ForecastRecord> records);

/// Per-component RMSE / (max - min of the observations), averaged over components.
/// Rows are time points, columns components.
double nrmse(const Matrix& point_forecasts, const Matrix& observations);

/// 1 - SSE / SST with sums pooled over components (per-component means).
double r2(const Matrix& point_forecasts, const Matrix& observations);

/// All three metrics, using the predictive mean as point forecast.
MetricsReport summarize(std::span<const ForecastRecord> records);

/// Posterior-predictive records for t in [begin, end): each of m_pred draws
/// picks a particle with probability proportional to its weight and pushes
/// fresh noise through it.
std::vector<ForecastRecord> posterior_predictive(std::span<const ad::ParamVector> particles,
                                                 std::span<const double> weights, const dgfm::NetworkSpec& spec,
                                                 const TimeSeries& series, std::size_t begin, std::size_t end,
                                                 std::size_t m_pred, std::uint64_t seed,
                                                 Execution exec = Execution::parallel);

MetricsReport evaluate_posterior(std::span<const ad::ParamVector> particles, std::span<const double> weights,
                                 const dgfm::NetworkSpec& spec, const TimeSeries& series, std::size_t begin,
                                 std::size_t end, std::size_t m_pred, std::uint64_t seed,
                                 Execution exec = Execution::parallel);

} // namespace pqda::diagnostics
