#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "pqda/dgfm.hpp"

using namespace pqda;
using dgfm::NetworkSpec;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.window = 1;
  s.obs_dim = 1;
  s.gru_hidden = 1;
  s.dense_widths = {1};
  s.noise_dim = 1;
  return s;
}

NetworkSpec small_spec() {
  NetworkSpec s;
  s.window = 4;
  s.obs_dim = 3;
  s.gru_hidden = 5;
  s.dense_widths = {6, 3};
  s.noise_dim = 2;
  return s;
}

std::vector<double> random_history(const NetworkSpec& s, unsigned seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::vector<double> h(s.window * s.obs_dim);
  for (auto& v : h) v = nd(eng);
  return h;
}

} // namespace

TEST_CASE("param_count by hand") {
  CHECK(dgfm::param_count(tiny_spec()) == 15);
}

TEST_CASE("default Lorenz network has 4442 parameters") {
  NetworkSpec s;
  CHECK(dgfm::param_count(s) == 4442);
}

TEST_CASE("one extra noise input adds one weight per first-layer unit") {
  NetworkSpec s = tiny_spec();
  s.obs_dim = 8;
  s.gru_hidden = 16;
  s.dense_widths = {37, 8};
  const auto base = dgfm::param_count(s);
  s.noise_dim = 2;
  CHECK(dgfm::param_count(s) - base == 37);
}

TEST_CASE("invalid specs are rejected") {
  NetworkSpec s = tiny_spec();
  s.dense_widths = {4, 2};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = tiny_spec();
  s.window = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = tiny_spec();
  s.dense_widths.clear();
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("init_params") {
  NetworkSpec big;
  big.window = 1;
  big.obs_dim = 100;
  big.gru_hidden = 100;
  big.dense_widths = {200, 100};
  big.noise_dim = 1;
  REQUIRE(dgfm::param_count(big) >= 100000);

  SUBCASE("deterministic given seed") {
    CHECK(dgfm::init_params(small_spec(), 42, 0.3) == dgfm::init_params(small_spec(), 42, 0.3));
    CHECK(dgfm::init_params(small_spec(), 42, 0.3) != dgfm::init_params(small_spec(), 43, 0.3));
  }
  SUBCASE("sample variance matches scale squared") {
    const double scale = 0.5;
    const auto p = dgfm::init_params(big, 9, scale);
    const double mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
    double var = 0.0;
    for (double v : p) var += (v - mean) * (v - mean);
    var /= static_cast<double>(p.size() - 1);
    CHECK(std::abs(var / (scale * scale) - 1.0) < 0.05);
  }
  SUBCASE("vanishing scale gives zero entries") {
    for (double v : dgfm::init_params(small_spec(), 1, 1e-300)) CHECK(std::abs(v) < 1e-290);
  }
  CHECK_THROWS_AS(dgfm::init_params(small_spec(), 1, 0.0), std::invalid_argument);
}

TEST_CASE("zero parameters forecast zero") {
  const NetworkSpec s = small_spec();
  dgfm::ForecastModel model(s, std::vector<double>(dgfm::param_count(s), 0.0));
  const std::vector<double> noise{0.3, -1.2};
  for (double v : dgfm::simulate_forecast(model, random_history(s, 1), noise)) CHECK(v == 0.0);
  auto eng = rng::stream(3, {});
  const Matrix ens = dgfm::forecast_ensemble(model, random_history(s, 2), 5, eng);
  for (double v : ens.flat()) CHECK(v == 0.0);
}

TEST_CASE("simulate_forecast is deterministic and checks dimensions") {
  const NetworkSpec s = small_spec();
  dgfm::ForecastModel model(s, dgfm::init_params(s, 5, 0.5));
  const auto hist = random_history(s, 4);
  const std::vector<double> noise{0.1, 0.2};
  CHECK(dgfm::simulate_forecast(model, hist, noise) == dgfm::simulate_forecast(model, hist, noise));
  CHECK_THROWS_AS(dgfm::simulate_forecast(model, std::vector<double>(hist.size() + 3), noise), std::invalid_argument);
  CHECK_THROWS_AS(dgfm::simulate_forecast(model, hist, std::vector<double>{0.1}), std::invalid_argument);
  CHECK_THROWS_AS(dgfm::ForecastModel(s, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("tape recording agrees with the plain forward pass") {
  const NetworkSpec s = small_spec();
  const auto params = dgfm::init_params(s, 8, 0.6);
  const dgfm::Layout layout(s);
  const auto hist = random_history(s, 9);
  const std::vector<double> noise{-0.7, 1.1};

  dgfm::Forecaster f(s);
  std::vector<double> out(s.obs_dim);
  f.simulate(params, hist, noise, out);

  ad::Tape tape;
  tape.bind(params);
  ad::Var h = dgfm::record_encode(tape, s, layout, hist);
  ad::Var y = dgfm::record_decode(tape, layout, h, noise);
  const auto taped = tape.value(y);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(taped[i] == out[i]);
}

TEST_CASE("directional derivative of the forecast matches autodiff") {
  const NetworkSpec s = small_spec();
  const auto params = dgfm::init_params(s, 10, 0.5);
  const dgfm::Layout layout(s);
  const auto hist = random_history(s, 11);
  const std::vector<double> noise{0.4, -0.2};

  ad::Tape tape;
  tape.bind(params);
  ad::Var out = tape.norm(dgfm::record_decode(tape, layout, dgfm::record_encode(tape, s, layout, hist), noise));
  std::vector<double> grad(params.size());
  tape.backward(out, grad);

  const auto dir = dgfm::init_params(s, 12, 1.0);
  double analytic = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i) analytic += grad[i] * dir[i];

  auto value_at = [&](double eps) {
    std::vector<double> p = params;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += eps * dir[i];
    dgfm::Forecaster f(s);
    std::vector<double> y(s.obs_dim);
    f.simulate(p, hist, noise, y);
    double acc = 0.0;
    for (double v : y) acc += v * v;
    return std::sqrt(acc);
  };
  const double eps = 1e-5;
  const double fd = (value_at(eps) - value_at(-eps)) / (2 * eps);
  CHECK(std::abs(fd - analytic) / std::max(1.0, std::abs(analytic)) < 1e-4);
}

TEST_CASE("forecast_ensemble shapes and errors") {
  const NetworkSpec s = small_spec();
  dgfm::ForecastModel model(s, dgfm::init_params(s, 13, 0.5));
  auto eng = rng::stream(1, {});
  const Matrix two = dgfm::forecast_ensemble(model, random_history(s, 1), 2, eng);
  CHECK(two.rows() == 2);
  CHECK(two.cols() == s.obs_dim);
  CHECK_THROWS_AS(dgfm::forecast_ensemble(model, random_history(s, 1), 1, eng), std::invalid_argument);

  auto a = rng::stream(77, {});
  auto b = rng::stream(77, {});
  CHECK(dgfm::forecast_ensemble(model, random_history(s, 2), 4, a) ==
        dgfm::forecast_ensemble(model, random_history(s, 2), 4, b));
}

TEST_CASE("ensemble mean of a linear pushforward matches its analytic mean") {
  // With every GRU weight zero the hidden state stays at 0, so the forecast is
  // slope * W + intercept with W ~ N(0, 1).
  const NetworkSpec s = tiny_spec();
  const dgfm::Layout layout(s);
  std::vector<double> params(layout.total, 0.0);
  const double slope = 1.7, intercept = -0.4;
  params[layout.dense[0].w + 1] = slope;  // weight on the noise input
  params[layout.dense[0].b] = intercept;
  dgfm::ForecastModel model(s, params);
  auto eng = rng::stream(2024, {});
  const std::size_t m = 10000;
  const Matrix draws = dgfm::forecast_ensemble(model, std::vector<double>{3.0}, m, eng);
  double mean = 0.0;
  for (double v : draws.flat()) mean += v;
  mean /= static_cast<double>(m);
  const double se = slope / std::sqrt(static_cast<double>(m));
  CHECK(std::abs(mean - intercept) < 3.0 * se);
}
