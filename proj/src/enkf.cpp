#include "pqda/enkf.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pqda/lorenz96.hpp"
#include "pqda/random.hpp"

namespace pqda::enkf {

namespace {

using EigenRowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EigenRowMatrix> view(const Matrix& m) {
  return {m.flat().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

Eigen::MatrixXd sample_covariance(const Matrix& ens) {
  const auto X = view(ens);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const EigenRowMatrix centered = X.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(ens.rows() - 1);
}

} // namespace

void EnKFConfig::validate() const {
  if (ensemble_size < 2) throw std::invalid_argument("EnKFConfig: ensemble_size must be at least 2");
  if (!(obs_noise_var > 0.0)) throw std::invalid_argument("EnKFConfig: obs_noise_var must be positive");
  if (forcing_var < 0.0) throw std::invalid_argument("EnKFConfig: forcing_var must be non-negative");
  if (!(dt > 0.0) || !(delta_t > 0.0)) throw std::invalid_argument("EnKFConfig: dt and delta_t must be positive");
}

Ensemble forecast_step(const Ensemble& ens, const EnKFConfig& cfg, std::uint64_t seed, std::size_t step,
                       Execution exec) {
  const std::size_t K = ens.cols();
  const std::size_t substeps = static_cast<std::size_t>(std::llround(cfg.delta_t / cfg.dt));
  if (substeps == 0) throw std::invalid_argument("forecast_step: delta_t shorter than dt");
  Ensemble out = ens;
  const double forcing_sd = std::sqrt(cfg.forcing_var);
  for_each_index(exec, ens.rows(), [&](std::size_t member) {
    auto eng = rng::stream(seed, {rng::enkf_forcing, step, member});
    std::vector<double> forcing(K);
    rng::fill_normal(eng, forcing, 1.0);
    for (auto& f : forcing) f = cfg.forcing_mean + forcing_sd * f;
    lorenz96::Rk4 stepper(K);
    auto drift = [&forcing](std::span<const double> in, std::span<double> d) {
      lorenz96::drift_misspecified(in, forcing, d);
    };
    auto state = out.row(member);
    for (std::size_t n = 0; n < substeps; ++n) stepper.step(state, cfg.dt, drift);
    lorenz96::check_bounded(state, "enkf forecast_step");
  });
  return out;
}

Matrix kalman_gain(const Ensemble& ens, double obs_noise_var) {
  if (ens.rows() < 2) throw std::invalid_argument("kalman_gain: ensemble_size must be at least 2");
  const Eigen::MatrixXd C = sample_covariance(ens);
  const Eigen::Index K = C.rows();
  const Eigen::MatrixXd S = C + obs_noise_var * Eigen::MatrixXd::Identity(K, K);
  // G = C S^-1 = (S^-1 C)^T since both are symmetric.
  const Eigen::MatrixXd G = S.ldlt().solve(C).transpose();
  Matrix out(static_cast<std::size_t>(K), static_cast<std::size_t>(K));
  for (Eigen::Index r = 0; r < K; ++r)
    for (Eigen::Index c = 0; c < K; ++c) out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = G(r, c);
  return out;
}

Ensemble analysis_step(const Ensemble& ens, std::span<const double> y_obs, double obs_noise_var, std::uint64_t seed,
                       std::size_t step) {
  if (ens.rows() < 2) throw std::invalid_argument("analysis_step: ensemble_size must be at least 2");
  if (y_obs.size() != ens.cols()) throw std::invalid_argument("analysis_step: observation dimension mismatch");
  if (!(obs_noise_var > 0.0)) throw std::invalid_argument("analysis_step: obs_noise_var must be positive");
  const std::size_t K = ens.cols();
  const Matrix G = kalman_gain(ens, obs_noise_var);
  const double sd = std::sqrt(obs_noise_var);
  Ensemble out = ens;
  std::vector<double> innovation(K);
  for (std::size_t member = 0; member < ens.rows(); ++member) {
    auto eng = rng::stream(seed, {rng::enkf_perturbation, step, member});
    rng::fill_normal(eng, innovation, sd);
    const auto m = ens.row(member);
    for (std::size_t k = 0; k < K; ++k) innovation[k] += y_obs[k] - m[k];
    auto dst = out.row(member);
    for (std::size_t r = 0; r < K; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < K; ++c) acc += G(r, c) * innovation[c];
      dst[r] += acc;
    }
  }
  return out;
}

FilterRecord run_filter(const Matrix& observations, const Ensemble& initial, const Propagator& propagate,
                        double obs_noise_var, std::uint64_t seed, std::size_t record_begin, std::size_t record_end) {
  FilterRecord rec;
  const std::size_t T = observations.rows();
  record_begin = std::max<std::size_t>(record_begin, 1);
  record_end = std::min(record_end, T);
  rec.first_index = record_begin;
  if (T < 2 || record_begin >= record_end) return rec;
  Ensemble ens = initial;
  for (std::size_t n = 1; n < record_end; ++n) {
    Ensemble forecast = propagate(ens, n);
    ens = analysis_step(forecast, observations.row(n), obs_noise_var, seed, n);
    if (n >= record_begin) {
      rec.predictive.push_back(std::move(forecast));
      rec.filtered.push_back(ens);
    }
  }
  return rec;
}

Ensemble initial_ensemble(std::span<const double> first_obs, const EnKFConfig& cfg, std::uint64_t seed) {
  Ensemble ens(cfg.ensemble_size, first_obs.size());
  const double sd = std::sqrt(cfg.obs_noise_var);
  for (std::size_t member = 0; member < cfg.ensemble_size; ++member) {
    auto eng = rng::stream(seed, {rng::enkf_init, member});
    auto row = ens.row(member);
    rng::fill_normal(eng, row, sd);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += first_obs[k];
  }
  return ens;
}

FilterRecord run_filter(const TimeSeries& series, const EnKFConfig& cfg, std::uint64_t seed, std::size_t record_begin,
                        std::size_t record_end, Execution exec) {
  cfg.validate();
  if (series.length() == 0) return FilterRecord{};
  const Ensemble init = initial_ensemble(series.observations.row(0), cfg, seed);
  auto propagate = [&](const Ensemble& e, std::size_t step) { return forecast_step(e, cfg, seed, step, exec); };
  return run_filter(series.observations, init, propagate, cfg.obs_noise_var, seed, record_begin, record_end);
}

Matrix observation_draws(const Ensemble& forecast, double obs_noise_var, std::uint64_t seed, std::size_t step) {
  Matrix out = forecast;
  const double sd = std::sqrt(obs_noise_var);
  std::vector<double> noise(forecast.cols());
  for (std::size_t member = 0; member < forecast.rows(); ++member) {
    auto eng = rng::stream(seed, {rng::enkf_observation, step, member});
    rng::fill_normal(eng, noise, sd);
    auto row = out.row(member);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += noise[k];
  }
  return out;
}

} // namespace pqda::enkf
