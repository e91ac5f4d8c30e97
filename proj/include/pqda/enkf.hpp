#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pqda/matrix.hpp"
#include "pqda/parallel.hpp"
#include "pqda/timeseries.hpp"

namespace pqda::enkf {

struct EnKFConfig {
  std::size_t ensemble_size = 100;
  double obs_noise_var = 1.0;
  double forcing_mean = 20.0;
  double forcing_var = 1.0;
  double dt = 0.001;
  double delta_t = 0.2;

  void validate() const;
};

// ensemble_size x K, one member per row.
using Ensemble = Matrix;

/// Propagates each member over one record interval under the single-scale
/// drift, with forcing F_k drawn once per member per interval.
Ensemble forecast_step(const Ensemble& ens, const EnKFConfig& cfg, std::uint64_t seed, std::size_t step,
                       Execution exec = Execution::parallel);

/// Stochastic (perturbed-observation) analysis with identity observation
/// operator and R = obs_noise_var * I.
Ensemble analysis_step(const Ensemble& ens, std::span<const double> y_obs, double obs_noise_var, std::uint64_t seed,
                       std::size_t step);

/// Kalman gain C (C + R)^-1 from the sample covariance of `ens`.
Matrix kalman_gain(const Ensemble& ens, double obs_noise_var);

struct FilterRecord {
  // Row index of the first recorded step.
  std::size_t first_index = 0;
  // Pre-analysis (predictive) state ensembles, one per recorded step.
  std::vector<Ensemble> predictive;
  // Post-analysis ensembles, one per recorded step.
  std::vector<Ensemble> filtered;
};

using Propagator = std::function<Ensemble(const Ensemble&, std::size_t step)>;

/// Generic forecast/analysis loop over observations[1..]. Row 0 is consumed
/// by the initial ensemble; steps before record_begin are run but not stored.
FilterRecord run_filter(const Matrix& observations, const Ensemble& initial, const Propagator& propagate,
                        double obs_noise_var, std::uint64_t seed, std::size_t record_begin = 1,
                        std::size_t record_end = static_cast<std::size_t>(-1));

/// Initial ensemble: row 0 of the series plus N(0, obs_noise_var) perturbations.
Ensemble initial_ensemble(std::span<const double> first_obs, const EnKFConfig& cfg, std::uint64_t seed);

/// Lorenz-96 filter with the misspecified single-scale model.
FilterRecord run_filter(const TimeSeries& series, const EnKFConfig& cfg, std::uint64_t seed,
                        std::size_t record_begin = 1, std::size_t record_end = static_cast<std::size_t>(-1),
                        Execution exec = Execution::parallel);

/// Observation-space predictive draws: members plus fresh N(0, R) noise.
Matrix observation_draws(const Ensemble& forecast, double obs_noise_var, std::uint64_t seed, std::size_t step);

} // namespace pqda::enkf
