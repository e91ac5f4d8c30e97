#include "pqda/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pqda/random.hpp"

namespace pqda::diagnostics {

double calibration_level(std::size_t j) {
  return static_cast<double>(j) / static_cast<double>(calibration_grid_size + 1);
}

double empirical_quantile(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double calibration_error(std::span<const ForecastRecord> records) {
  if (records.size() < 2) throw std::invalid_argument("calibration_error: need at least 2 records");
  const std::size_t m = records.front().draws.rows();
  const std::size_t K = records.front().draws.cols();
  if (m < 2) throw std::invalid_argument("calibration_error: need at least 2 draws per record");
  for (const auto& r : records) {
    if (r.draws.rows() != m || r.draws.cols() != K || r.observation.size() != K) {
      throw std::invalid_argument("calibration_error: records must share draw count and dimension");
    }
  }
  const std::size_t G = calibration_grid_size;
  double total = 0.0;
  std::vector<double> column(m);
  std::vector<std::size_t> covered(G);
  std::vector<double> gaps(G);
  for (std::size_t i = 0; i < K; ++i) {
    std::fill(covered.begin(), covered.end(), 0);
    for (const auto& r : records) {
      for (std::size_t j = 0; j < m; ++j) column[j] = r.draws(j, i);
      std::sort(column.begin(), column.end());
      const double y = r.observation[i];
      for (std::size_t g = 0; g < G; ++g) {
        const double level = calibration_level(g + 1);
        const double lo = empirical_quantile(column, 0.5 * (1.0 - level));
        const double hi = empirical_quantile(column, 0.5 * (1.0 + level));
        if (lo <= y && y <= hi) ++covered[g];
      }
    }
    for (std::size_t g = 0; g < G; ++g) {
      const double coverage = static_cast<double>(covered[g]) / static_cast<double>(records.size());
      gaps[g] = std::abs(coverage - calibration_level(g + 1));
    }
    std::sort(gaps.begin(), gaps.end());
    const double median = G % 2 == 1 ? gaps[G / 2] : 0.5 * (gaps[G / 2 - 1] + gaps[G / 2]);
    total += median;
  }
  return total / static_cast<double>(K);
}

namespace {

void check_shapes(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument(std::string(what) + ": shape mismatch");
  if (a.rows() == 0) throw std::invalid_argument(std::string(what) + ": no time points");
}

} // namespace

double nrmse(const Matrix& point_forecasts, const Matrix& observations) {
  check_shapes(point_forecasts, observations, "nrmse");
  const std::size_t T = observations.rows(), K = observations.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    double lo = observations(0, i), hi = observations(0, i), sse = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double y = observations(t, i);
      lo = std::min(lo, y);
      hi = std::max(hi, y);
      const double e = point_forecasts(t, i) - y;
      sse += e * e;
    }
    if (!(hi > lo)) throw std::invalid_argument("nrmse: observations are constant (zero range)");
    total += std::sqrt(sse / static_cast<double>(T)) / (hi - lo);
  }
  return total / static_cast<double>(K);
}

double r2(const Matrix& point_forecasts, const Matrix& observations) {
  check_shapes(point_forecasts, observations, "r2");
  const std::size_t T = observations.rows(), K = observations.cols();
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += observations(t, i);
    mean /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      const double y = observations(t, i);
      sse += (y - point_forecasts(t, i)) * (y - point_forecasts(t, i));
      sst += (y - mean) * (y - mean);
    }
  }
  if (!(sst > 0.0)) throw std::invalid_argument("r2: observations have zero variance");
  return 1.0 - sse / sst;
}

MetricsReport summarize(std::span<const ForecastRecord> records) {
  if (records.empty()) throw std::invalid_argument("summarize: no records");
  const std::size_t K = records.front().observation.size();
  Matrix means(records.size(), K), obs(records.size(), K);
  for (std::size_t t = 0; t < records.size(); ++t) {
    const auto& d = records[t].draws;
    for (std::size_t i = 0; i < K; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d.rows(); ++j) acc += d(j, i);
      means(t, i) = acc / static_cast<double>(d.rows());
      obs(t, i) = records[t].observation[i];
    }
  }
  MetricsReport rep;
  rep.calibration_error = calibration_error(records);
  rep.nrmse = nrmse(means, obs);
  rep.r2 = r2(means, obs);
  return rep;
}

std::vector<ForecastRecord> posterior_predictive(std::span<const ad::ParamVector> particles,
                                                 std::span<const double> weights, const dgfm::NetworkSpec& spec,
                                                 const TimeSeries& series, std::size_t begin, std::size_t end,
                                                 std::size_t m_pred, std::uint64_t seed, Execution exec) {
  if (m_pred < 2) throw std::invalid_argument("posterior_predictive: m_pred must be at least 2");
  if (particles.empty() || particles.size() != weights.size()) {
    throw std::invalid_argument("posterior_predictive: particles and weights must be non-empty and aligned");
  }
  if (begin < spec.window || end > series.length() || begin > end) {
    throw std::out_of_range("posterior_predictive: range outside series");
  }
  std::vector<double> cumulative(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cumulative.begin());
  const double total = cumulative.back();

  std::vector<ForecastRecord> records(end - begin);
  for_each_index(exec, end - begin, [&](std::size_t r) {
    const std::size_t t = begin + r;
    auto eng = rng::stream(seed, {rng::evaluation, t});
    std::uniform_real_distribution<double> unif(0.0, total);
    std::vector<std::size_t> picks(m_pred);
    for (auto& p : picks) {
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), unif(eng));
      p = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), particles.size() - 1);
    }
    Matrix noise(m_pred, spec.noise_dim);
    rng::fill_normal(eng, noise.flat());

    dgfm::Forecaster f(spec);
    std::vector<double> hidden(spec.gru_hidden);
    ForecastRecord rec{Matrix(m_pred, spec.obs_dim), {}};
    const auto history = series.observations.rows_block(t - spec.window, spec.window);
    std::vector<std::size_t> order(m_pred);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return picks[a] < picks[b]; });
    std::size_t encoded = particles.size();
    for (std::size_t j : order) {
      if (picks[j] != encoded) {
        encoded = picks[j];
        f.encode(particles[encoded], history, hidden);
      }
      f.decode(particles[encoded], hidden, noise.row(j), rec.draws.row(j));
    }
    const auto y = series.observations.row(t);
    rec.observation.assign(y.begin(), y.end());
    records[r] = std::move(rec);
  });
  return records;
}

MetricsReport evaluate_posterior(std::span<const ad::ParamVector> particles, std::span<const double> weights,
                                 const dgfm::NetworkSpec& spec, const TimeSeries& series, std::size_t begin,
                                 std::size_t end, std::size_t m_pred, std::uint64_t seed, Execution exec) {
  const auto records = posterior_predictive(particles, weights, spec, series, begin, end, m_pred, seed, exec);
  MetricsReport rep = summarize(records);
  rep.range_begin = begin;
  rep.range_end = end;
  return rep;
}

} // namespace pqda::diagnostics
