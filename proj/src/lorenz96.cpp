#include "pqda/lorenz96.hpp"

#include <stdexcept>

namespace pqda::lorenz96 {

namespace {

std::size_t exact_ratio(double num, double den, const char* what) {
  const double r = num / den;
  const double rounded = std::round(r);
  if (rounded < 0 || std::abs(r - rounded) > 1e-9 * std::max(1.0, r)) {
    throw std::invalid_argument(std::string("SimConfig: ") + what + " must be an integer multiple of dt");
  }
  return static_cast<std::size_t>(rounded);
}

} // namespace

void L96Params::validate() const {
  if (K < 4) throw std::invalid_argument("L96Params: K must be at least 4");
  if (J < 1) throw std::invalid_argument("L96Params: J must be at least 1");
}

void SimConfig::validate() const {
  if (!(dt > 0.0) || !(delta_t > 0.0)) throw std::invalid_argument("SimConfig: dt and delta_t must be positive");
  if (burn_in < 0.0 || duration < 0.0) throw std::invalid_argument("SimConfig: burn_in and duration must be >= 0");
  if (!(split > 0.0 && split < 1.0)) throw std::invalid_argument("SimConfig: split must lie in (0, 1)");
  steps_per_record();
  exact_ratio(burn_in, dt, "burn_in");
}

std::size_t SimConfig::steps_per_record() const { return exact_ratio(delta_t, dt, "delta_t"); }

std::size_t SimConfig::record_count() const {
  return static_cast<std::size_t>(std::floor(duration / delta_t + 1e-9));
}

void drift_full(std::span<const double> s, std::span<double> out, const L96Params& p) {
  const std::size_t K = p.K, J = p.J, JK = J * K;
  const double* y = s.data();
  const double* x = s.data() + K;
  double* dy = out.data();
  double* dx = out.data() + K;
  const double coupling = p.h * p.c / p.b;
  for (std::size_t k = 0; k < K; ++k) {
    const double ym1 = y[(k + K - 1) % K], ym2 = y[(k + K - 2) % K], yp1 = y[(k + 1) % K];
    double fast = 0.0;
    for (std::size_t j = k * J; j < (k + 1) * J; ++j) fast += x[j];
    dy[k] = -ym1 * (ym2 - yp1) - y[k] + p.F - coupling * fast;
  }
  const double cb = p.c * p.b;
  for (std::size_t j = 0; j < JK; ++j) {
    const double xp1 = x[(j + 1) % JK], xp2 = x[(j + 2) % JK], xm1 = x[(j + JK - 1) % JK];
    dx[j] = -cb * xp1 * (xp2 - xm1) - p.c * x[j] + coupling * y[j / J];
  }
}

L96State drift_full(const L96State& state, const L96Params& p) {
  p.validate();
  if (state.y.size() != p.K || state.x.size() != p.J * p.K) throw std::invalid_argument("drift_full: state shape");
  std::vector<double> flat(state.y), d(p.K + p.J * p.K);
  flat.insert(flat.end(), state.x.begin(), state.x.end());
  drift_full(flat, d, p);
  L96State out;
  out.y.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(p.K));
  out.x.assign(d.begin() + static_cast<std::ptrdiff_t>(p.K), d.end());
  return out;
}

void drift_misspecified(std::span<const double> y, std::span<const double> forcing, std::span<double> out) {
  const std::size_t K = y.size();
  for (std::size_t k = 0; k < K; ++k) {
    const double yp1 = y[(k + 1) % K], ym2 = y[(k + 2 * K - 2) % K], ym1 = y[(k + K - 1) % K];
    out[k] = (yp1 - ym2) * ym1 - y[k] + forcing[k];
  }
}

std::vector<double> drift_misspecified(std::span<const double> y, std::span<const double> forcing) {
  if (forcing.size() != y.size()) throw std::invalid_argument("drift_misspecified: forcing length mismatch");
  std::vector<double> out(y.size());
  drift_misspecified(y, forcing, out);
  return out;
}

std::vector<double> rk4_step(std::span<const double> state, double dt, const DriftFn& drift) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  std::vector<double> s(state.begin(), state.end());
  Rk4 stepper(s.size());
  stepper.step(s, dt, drift);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s[i])) throw NumericalError("rk4_step: non-finite component " + std::to_string(i));
  }
  return s;
}

L96State initial_state(const L96Params& p) {
  L96State s{std::vector<double>(p.K, 0.0), std::vector<double>(p.J * p.K, 0.0)};
  s.y[0] = 1.0;
  s.x[0] = 1.0;
  return s;
}

TimeSeries generate_dataset(const L96Params& p, const SimConfig& sim) {
  p.validate();
  sim.validate();
  const L96State init = initial_state(p);
  std::vector<double> s(init.y);
  s.insert(s.end(), init.x.begin(), init.x.end());
  Rk4 stepper(s.size());
  auto drift = [&p](std::span<const double> in, std::span<double> out) { drift_full(in, out, p); };

  const std::size_t burn_steps = static_cast<std::size_t>(std::llround(sim.burn_in / sim.dt));
  for (std::size_t n = 0; n < burn_steps; ++n) {
    stepper.step(s, sim.dt, drift);
    check_bounded(s, "generate_dataset");
  }

  const std::size_t per_record = sim.steps_per_record();
  const std::size_t records = sim.record_count();
  TimeSeries ts;
  ts.observations = Matrix(0, p.K);
  ts.delta_t = sim.delta_t;
  ts.start_time = sim.burn_in;
  for (std::size_t r = 0; r < records; ++r) {
    for (std::size_t n = 0; n < per_record; ++n) {
      stepper.step(s, sim.dt, drift);
      check_bounded(s, "generate_dataset");
    }
    ts.observations.append_row(std::span<const double>(s).first(p.K));
  }
  ts.train_end = static_cast<std::size_t>(std::floor(sim.split * static_cast<double>(records)));
  return ts;
}

} // namespace pqda::lorenz96
