#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pqda/errors.hpp"
#include "pqda/timeseries.hpp"

namespace pqda::lorenz96 {

struct L96Params {
  std::size_t K = 8;
  std::size_t J = 32;
  double h = 1.0;
  double b = 10.0;
  double c = 10.0;
  double F = 20.0;

  void validate() const;
};

// Slow variables y (K) and fast variables x (J*K).
struct L96State {
  std::vector<double> y;
  std::vector<double> x;

  friend bool operator==(const L96State&, const L96State&) = default;
};

struct SimConfig {
  double dt = 0.001;
  double delta_t = 0.2;
  double burn_in = 2.0;
  double duration = 4000.0;
  double split = 0.8;

  void validate() const;
  std::size_t steps_per_record() const;
  std::size_t record_count() const;
};

/// Right-hand side of the two-scale system with cyclic boundaries.
L96State drift_full(const L96State& state, const L96Params& p);

/// Flat-layout variant: state = [y; x], out has the same layout.
void drift_full(std::span<const double> state, std::span<double> out, const L96Params& p);

/// Single-scale drift (x(k+1) - x(k-2)) x(k-1) - x(k) + F_k.
std::vector<double> drift_misspecified(std::span<const double> y, std::span<const double> forcing);
void drift_misspecified(std::span<const double> y, std::span<const double> forcing, std::span<double> out);

using DriftFn = std::function<void(std::span<const double>, std::span<double>)>;

/// Classical RK4 stepper with reusable stage buffers.
class Rk4 {
public:
  explicit Rk4(std::size_t n) : k1_(n), k2_(n), k3_(n), k4_(n), tmp_(n) {}

  template <typename Drift>
  void step(std::span<double> s, double dt, Drift&& drift) {
    const std::size_t n = s.size();
    drift(std::span<const double>(s), std::span<double>(k1_));
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = s[i] + 0.5 * dt * k1_[i];
    drift(std::span<const double>(tmp_), std::span<double>(k2_));
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = s[i] + 0.5 * dt * k2_[i];
    drift(std::span<const double>(tmp_), std::span<double>(k3_));
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = s[i] + dt * k3_[i];
    drift(std::span<const double>(tmp_), std::span<double>(k4_));
    for (std::size_t i = 0; i < n; ++i) s[i] += dt / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
  }

private:
  std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

/// One RK4 step; rejects non-finite results.
std::vector<double> rk4_step(std::span<const double> state, double dt, const DriftFn& drift);

// Components larger than this in magnitude abort integration.
inline constexpr double blow_up_threshold = 1e6;

inline void check_bounded(std::span<const double> s, const char* where) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s[i]) || std::abs(s[i]) > blow_up_threshold) {
      throw NumericalError(std::string(where) + ": state component " + std::to_string(i) +
                           " diverged (value " + std::to_string(s[i]) + ")");
    }
  }
}

L96State initial_state(const L96Params& p);

/// Integrates from the standard initial condition, discards burn_in and
/// records y every delta_t for duration time units.
TimeSeries generate_dataset(const L96Params& p, const SimConfig& sim);

} // namespace pqda::lorenz96
