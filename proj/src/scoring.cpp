#include "pqda/scoring.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pqda/errors.hpp"
#include "pqda/random.hpp"

namespace pqda::scoring {

namespace {

double distance_pow(std::span<const double> a, std::span<const double> b, double beta) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double dist = std::sqrt(acc);
  if (beta == 1.0) return dist;
  return std::pow(std::max(dist, 1e-12), beta);
}

} // namespace

void ScoreConfig::validate() const {
  if (!(beta > 0.0 && beta < 2.0)) throw std::invalid_argument("ScoreConfig: beta must lie in (0, 2)");
  if (m < 2) throw std::invalid_argument("ScoreConfig: m must be at least 2");
  if (!(gamma > 0.0)) throw std::invalid_argument("ScoreConfig: gamma must be positive");
}

double energy_score_estimate(const Matrix& samples, std::span<const double> y, double beta) {
  const std::size_t m = samples.rows();
  if (m < 2) throw std::invalid_argument("energy_score_estimate: need at least 2 samples");
  if (samples.cols() != y.size()) throw std::invalid_argument("energy_score_estimate: dimension mismatch");
  double to_obs = 0.0, pairwise = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    to_obs += distance_pow(samples.row(j), y, beta);
    for (std::size_t k = j + 1; k < m; ++k) pairwise += distance_pow(samples.row(j), samples.row(k), beta);
  }
  const double md = static_cast<double>(m);
  // Each unordered pair appears twice in the j != k sum.
  return 2.0 / md * to_obs - 2.0 / (md * (md - 1.0)) * pairwise;
}

ad::Var record_energy_score(ad::Tape& tape, std::span<const ad::Var> forecasts, std::span<const double> y,
                            double beta) {
  const std::size_t m = forecasts.size();
  if (m < 2) throw std::invalid_argument("record_energy_score: need at least 2 samples");
  auto powered = [&](ad::Var diff) {
    ad::Var n = tape.norm(diff);
    return beta == 1.0 ? n : tape.pow_abs(n, beta);
  };
  ad::Var obs = tape.input(y);
  std::vector<ad::Var> to_obs, pairs;
  to_obs.reserve(m);
  pairs.reserve(m * (m - 1) / 2);
  for (std::size_t j = 0; j < m; ++j) {
    to_obs.push_back(powered(tape.sub(forecasts[j], obs)));
    for (std::size_t k = j + 1; k < m; ++k) pairs.push_back(powered(tape.sub(forecasts[j], forecasts[k])));
  }
  const double md = static_cast<double>(m);
  ad::Var first = tape.scale(tape.sum(to_obs), 2.0 / md);
  ad::Var second = tape.scale(tape.sum(pairs), 2.0 / (md * (md - 1.0)));
  return tape.sub(first, second);
}

void frozen_noise(std::uint64_t noise_seed, std::size_t t, std::span<double> out) {
  rng::Engine eng(rng::derive(noise_seed, {static_cast<std::uint64_t>(t)}));
  rng::fill_normal(eng, out);
}

PrequentialScorer::PrequentialScorer(const dgfm::NetworkSpec& spec, const ScoreConfig& cfg)
    : spec_(spec),
      cfg_(cfg),
      forecaster_(spec),
      hidden_(spec.gru_hidden),
      noise_(cfg.m * spec.noise_dim),
      samples_(cfg.m, spec.obs_dim) {
  cfg_.validate();
}

void PrequentialScorer::check_index(const TimeSeries& series, std::size_t t) const {
  if (series.dim() != spec_.obs_dim) throw std::invalid_argument("series dimension differs from network obs_dim");
  if (t < spec_.window || t >= series.length()) {
    throw std::out_of_range("time index " + std::to_string(t) + " outside scorable range [" +
                            std::to_string(spec_.window) + ", " + std::to_string(series.length()) + ")");
  }
}

double PrequentialScorer::pointwise(std::span<const double> params, const TimeSeries& series, std::size_t t,
                                    std::uint64_t noise_seed) {
  check_index(series, t);
  const auto history = series.observations.rows_block(t - spec_.window, spec_.window);
  forecaster_.encode(params, history, hidden_);
  frozen_noise(noise_seed, t, noise_);
  const std::size_t nd = spec_.noise_dim;
  for (std::size_t j = 0; j < cfg_.m; ++j) {
    forecaster_.decode(params, hidden_, std::span<const double>(noise_).subspan(j * nd, nd), samples_.row(j));
  }
  const double s = energy_score_estimate(samples_, series.observations.row(t), cfg_.beta);
  if (!std::isfinite(s)) throw NumericalError("non-finite energy score at time index " + std::to_string(t));
  return s;
}

double PrequentialScorer::loss(std::span<const double> params, const TimeSeries& series, std::size_t begin,
                               std::size_t end, std::uint64_t noise_seed) {
  double total = 0.0;
  for (std::size_t t = begin; t < end; ++t) total += pointwise(params, series, t, noise_seed);
  return cfg_.gamma * total;
}

void PrequentialScorer::accumulate_gradient(std::span<const double> params, const TimeSeries& series,
                                            std::span<const std::size_t> indices, std::span<const double> weights,
                                            std::uint64_t noise_seed, std::span<double> grad) {
  if (indices.size() != weights.size()) throw std::invalid_argument("indices and weights differ in length");
  if (grad.size() != params.size()) throw std::invalid_argument("gradient length differs from parameter count");
  const dgfm::Layout& layout = forecaster_.layout();
  const std::size_t nd = spec_.noise_dim;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t t = indices[i];
    check_index(series, t);
    if (weights[i] == 0.0) continue;
    tape_.bind(params);
    const auto history = series.observations.rows_block(t - spec_.window, spec_.window);
    ad::Var hidden = dgfm::record_encode(tape_, spec_, layout, history);
    frozen_noise(noise_seed, t, noise_);
    vars_.clear();
    for (std::size_t j = 0; j < cfg_.m; ++j) {
      vars_.push_back(dgfm::record_decode(tape_, layout, hidden, std::span<const double>(noise_).subspan(j * nd, nd)));
    }
    ad::Var score = record_energy_score(tape_, vars_, series.observations.row(t), cfg_.beta);
    tape_.accumulate_gradient(score, weights[i], grad);
    for (double g : grad) {
      if (!std::isfinite(g)) throw NumericalError("non-finite loss gradient at time index " + std::to_string(t));
    }
  }
}

double prequential_loss(const dgfm::ForecastModel& model, const TimeSeries& series, std::size_t begin,
                        std::size_t end, const ScoreConfig& cfg, std::uint64_t noise_seed) {
  if (begin >= end) return 0.0;
  if (begin < model.spec().window || end > series.length()) {
    throw std::out_of_range("prequential_loss: range outside series");
  }
  PrequentialScorer scorer(model.spec(), cfg);
  return scorer.loss(model.params(), series, begin, end, noise_seed);
}

ad::ParamVector loss_gradient(const dgfm::ForecastModel& model, const TimeSeries& series,
                              std::span<const std::size_t> indices, std::span<const double> weights,
                              const ScoreConfig& cfg, std::uint64_t noise_seed) {
  PrequentialScorer scorer(model.spec(), cfg);
  ad::ParamVector grad(model.params().size(), 0.0);
  scorer.accumulate_gradient(model.params(), series, indices, weights, noise_seed, grad);
  return grad;
}

} // namespace pqda::scoring
