#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "pqda/diagnostics.hpp"
#include "pqda/enkf.hpp"
#include "pqda/random.hpp"

using namespace pqda;
using namespace pqda::enkf;

namespace {

Ensemble random_ensemble(std::size_t n, std::size_t K, unsigned seed, double sd = 1.0, double mean = 0.0) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd(mean, sd);
  Ensemble e(n, K);
  for (auto& v : e.flat()) v = nd(eng);
  return e;
}

std::vector<double> column_means(const Ensemble& e) {
  std::vector<double> m(e.cols(), 0.0);
  for (std::size_t r = 0; r < e.rows(); ++r)
    for (std::size_t c = 0; c < e.cols(); ++c) m[c] += e(r, c);
  for (auto& v : m) v /= static_cast<double>(e.rows());
  return m;
}

double column_variance(const Ensemble& e, std::size_t c) {
  const double m = column_means(e)[c];
  double s = 0.0;
  for (std::size_t r = 0; r < e.rows(); ++r) s += (e(r, c) - m) * (e(r, c) - m);
  return s / static_cast<double>(e.rows() - 1);
}

} // namespace

TEST_CASE("forecast_step") {
  EnKFConfig cfg;
  cfg.delta_t = 0.05;

  SUBCASE("identical members without forcing noise stay identical") {
    cfg.forcing_var = 0.0;
    Ensemble e(4, 8);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) e(r, c) = std::sin(static_cast<double>(c));
    const auto out = forecast_step(e, cfg, 1, 1);
    for (std::size_t r = 1; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(out(r, c) == out(0, c));
  }
  SUBCASE("deterministic given seed and independent of scheduling") {
    const auto e = random_ensemble(16, 8, 2, 3.0);
    CHECK(forecast_step(e, cfg, 7, 3, Execution::serial) == forecast_step(e, cfg, 7, 3, Execution::parallel));
    CHECK(forecast_step(e, cfg, 7, 3) != forecast_step(e, cfg, 8, 3));
  }
  SUBCASE("a constant state relaxes toward the forcing like a linear ODE") {
    // For y = c 1 the advection term vanishes, so y' = -y + F stays uniform
    // and y(t) = F + (c - F) e^{-t}.
    cfg.forcing_var = 0.0;
    cfg.delta_t = 0.2;
    Ensemble e(2, 6, 3.0);
    const auto out = forecast_step(e, cfg, 1, 1);
    const double expected = 20.0 + (3.0 - 20.0) * std::exp(-0.2);
    for (double v : out.flat()) CHECK(v == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("analysis_step limits") {
  const auto e = random_ensemble(50, 3, 4);
  const std::vector<double> y{1.0, -2.0, 0.5};

  SUBCASE("huge observation noise leaves members almost unchanged") {
    const auto out = analysis_step(e, y, 1e12, 1, 1);
    for (std::size_t i = 0; i < e.flat().size(); ++i) CHECK(std::abs(out.flat()[i] - e.flat()[i]) < 1e-4);
  }
  SUBCASE("identical members are a fixed point") {
    Ensemble same(10, 3, 0.7);
    CHECK(analysis_step(same, y, 1.0, 1, 1) == same);
  }
  SUBCASE("size is preserved") {
    const auto out = analysis_step(e, y, 1.0, 1, 1);
    CHECK(out.rows() == e.rows());
    CHECK(out.cols() == e.cols());
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(analysis_step(Ensemble(1, 3), y, 1.0, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(analysis_step(e, std::vector<double>{1.0}, 1.0, 1, 1), std::invalid_argument);
  }
}

TEST_CASE("Kalman gain has spectral norm below one") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const auto e = random_ensemble(20, 5, seed, 0.5 + seed);
    const Matrix G = kalman_gain(e, 0.3 + 0.2 * seed);
    Eigen::MatrixXd g(5, 5);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) g(r, c) = G(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    const double norm = Eigen::JacobiSVD<Eigen::MatrixXd>(g).singularValues()(0);
    CHECK(norm < 1.0);
  }
}

TEST_CASE("one-dimensional linear Gaussian model matches the Kalman filter") {
  const double a = 0.9, q = 0.5, r = 1.0, m0 = 1.0, p0 = 2.0;
  const std::size_t steps = 50, members = 10000;
  std::mt19937_64 truth_eng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix obs(steps + 1, 1);
  double x = m0;
  for (std::size_t n = 0; n <= steps; ++n) {
    if (n > 0) x = a * x + std::sqrt(q) * nd(truth_eng);
    obs(n, 0) = x + std::sqrt(r) * nd(truth_eng);
  }

  const Ensemble init = random_ensemble(members, 1, 12, std::sqrt(p0), m0);
  const Propagator propagate = [&](const Ensemble& e, std::size_t step) {
    Ensemble out = e;
    for (std::size_t i = 0; i < e.rows(); ++i) {
      auto eng = rng::stream(99, {step, i});
      std::normal_distribution<double> w(0.0, std::sqrt(q));
      out(i, 0) = a * e(i, 0) + w(eng);
    }
    return out;
  };
  const auto rec = run_filter(obs, init, propagate, r, 5);
  REQUIRE(rec.filtered.size() == steps);

  // The initial ensemble plays the role of the step-0 posterior.
  double m = m0, p = p0;
  for (std::size_t n = 1; n <= steps; ++n) {
    m = a * m;
    p = a * a * p + q;
    const double k = p / (p + r);
    m += k * (obs(n, 0) - m);
    p *= 1.0 - k;
    const auto& e = rec.filtered[n - 1];
    CHECK(std::abs(column_means(e)[0] - m) < 0.05);
    CHECK(std::abs(column_variance(e, 0) / p - 1.0) < 0.10);
  }
}

TEST_CASE("run_filter") {
  EnKFConfig cfg;
  cfg.ensemble_size = 20;

  SUBCASE("zero-length series gives an empty record") {
    TimeSeries empty;
    empty.observations = Matrix(0, 8);
    const auto rec = run_filter(empty, cfg, 1);
    CHECK(rec.predictive.empty());
    CHECK(rec.filtered.empty());
  }
  SUBCASE("record window") {
    TimeSeries s;
    s.observations = Matrix(12, 8, 1.0);
    s.delta_t = 0.2;
    s.train_end = 6;
    const auto rec = run_filter(s, cfg, 1, 4, 9);
    CHECK(rec.first_index == 4);
    CHECK(rec.predictive.size() == 5);
    CHECK(rec.filtered.size() == 5);
  }
  SUBCASE("beats climatology on data from its own model") {
    // Truth follows the single-scale model with random forcing, observed with
    // unit noise, so the filter is well specified.
    EnKFConfig truth_cfg;
    const std::size_t T = 300;
    Ensemble state(1, 8);
    for (std::size_t k = 0; k < 8; ++k) state(0, k) = k == 0 ? 1.0 : 0.0;
    for (std::size_t n = 0; n < 20; ++n) state = forecast_step(state, truth_cfg, 1000, n);
    TimeSeries s;
    s.observations = Matrix(T, 8);
    auto noise = rng::stream(2000, {});
    for (std::size_t n = 0; n < T; ++n) {
      state = forecast_step(state, truth_cfg, 1001, n);
      auto row = s.observations.row(n);
      rng::fill_normal(noise, row);
      for (std::size_t k = 0; k < 8; ++k) row[k] += state(0, k);
    }
    s.delta_t = 0.2;
    s.train_end = T / 2;

    cfg.ensemble_size = 50;
    const auto rec = run_filter(s, cfg, 3);
    Matrix pred(T - 1, 8), obs(T - 1, 8), clim(T - 1, 8);
    const auto mean_obs = column_means(s.observations);
    for (std::size_t n = 1; n < T; ++n) {
      const auto m = column_means(rec.predictive[n - 1]);
      for (std::size_t k = 0; k < 8; ++k) {
        pred(n - 1, k) = m[k];
        obs(n - 1, k) = s.observations(n, k);
        clim(n - 1, k) = mean_obs[k];
      }
    }
    CHECK(diagnostics::nrmse(pred, obs) < diagnostics::nrmse(clim, obs));
  }
  SUBCASE("deterministic given seed") {
    TimeSeries s;
    s.observations = random_ensemble(10, 8, 5, 3.0);
    s.delta_t = 0.2;
    s.train_end = 5;
    const auto a = run_filter(s, cfg, 9, 1, 10, Execution::serial);
    const auto b = run_filter(s, cfg, 9, 1, 10, Execution::parallel);
    CHECK(a.filtered.back() == b.filtered.back());
  }
}

TEST_CASE("observation draws add unit-scale noise to members") {
  const Ensemble e(4000, 2, 1.5);
  const auto d = observation_draws(e, 4.0, 3, 7);
  CHECK(column_means(d)[0] == doctest::Approx(1.5).epsilon(0.05));
  CHECK(column_variance(d, 1) == doctest::Approx(4.0).epsilon(0.1));
  CHECK(observation_draws(e, 4.0, 3, 7) == d);
}
