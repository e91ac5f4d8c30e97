#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "gaussian_model.hpp"
#include "pqda/errors.hpp"
#include "pqda/smc.hpp"

using namespace pqda;
using namespace pqda::smc;

namespace {

std::vector<std::size_t> counts_of(const std::vector<std::size_t>& idx, std::size_t n) {
  std::vector<std::size_t> c(n, 0);
  for (auto i : idx) ++c[i];
  return c;
}

ParticleEnsemble uniform_ensemble(std::vector<ParamVector> particles) {
  ParticleEnsemble e;
  const double lw = -std::log(static_cast<double>(particles.size()));
  e.log_weights.assign(particles.size(), lw);
  e.particles = std::move(particles);
  return e;
}

double weight_sum(const ParticleEnsemble& e) {
  double s = 0.0;
  for (double v : e.log_weights) s += std::exp(v);
  return s;
}

// grad = theta + n (theta - ybar) / sigma^2 for a fixed Gaussian posterior.
class ConjugateTarget : public TemperedTarget {
public:
  ConjugateTarget(std::vector<double> ybar, double n) : ybar_(std::move(ybar)), n_(n) {}
  void gradient(std::span<const double> theta, std::size_t, std::size_t, std::span<double> grad) const override {
    for (std::size_t i = 0; i < theta.size(); ++i) grad[i] = theta[i] + n_ * (theta[i] - ybar_[i]);
  }
  double t_scale() const override { return n_; }

private:
  std::vector<double> ybar_;
  double n_;
};

kernel::KernelConfig toy_kernel() {
  kernel::KernelConfig k;
  k.eta = 1.5e-3;
  k.lambda = 1.0;
  return k;
}

} // namespace

TEST_CASE("prior log densities") {
  PriorSpec g{PriorFamily::gaussian, 5, 4};
  const std::vector<double> zero4(4, 0.0);
  CHECK(prior_logpdf(g, zero4) == doctest::Approx(-2.0 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));

  PriorSpec t3{PriorFamily::student_t, 3, 1};
  const std::vector<double> zero1{0.0};
  const double at_zero = std::log(2.0 / (std::numbers::pi * std::sqrt(3.0)));
  CHECK(prior_logpdf(t3, zero1) == doctest::Approx(at_zero).epsilon(1e-13));

  // dof 5 at x = 1: Gamma(3) / (Gamma(5/2) sqrt(5 pi)) (1 + 1/5)^-3.
  PriorSpec t5{PriorFamily::student_t, 5, 1};
  const std::vector<double> one{1.0};
  const double gamma52 = 0.75 * std::sqrt(std::numbers::pi);
  const double expected = std::log(2.0 / (gamma52 * std::sqrt(5.0 * std::numbers::pi))) - 3.0 * std::log(1.2);
  CHECK(prior_logpdf(t5, one) == doctest::Approx(expected).epsilon(1e-13));

  PriorSpec bad{PriorFamily::student_t, 4, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("prior gradient is minus the derivative of the log density") {
  const std::vector<double> theta{0.3, -1.7, 2.2};
  for (auto spec : {PriorSpec{PriorFamily::gaussian, 5, 3}, PriorSpec{PriorFamily::student_t, 3, 3},
                    PriorSpec{PriorFamily::student_t, 5, 3}}) {
    std::vector<double> grad(3, 0.0);
    add_prior_gradient(spec, theta, grad);
    for (std::size_t i = 0; i < 3; ++i) {
      auto up = theta, down = theta;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = -(prior_logpdf(spec, up) - prior_logpdf(spec, down)) / 2e-6;
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("gaussian prior draws have unit variance") {
  PriorSpec g{PriorFamily::gaussian, 5, 1000};
  auto eng = rng::stream(12, {});
  const auto draws = prior_sample(g, 100, eng);
  double s = 0.0, s2 = 0.0, n = 0.0;
  for (const auto& p : draws)
    for (double v : p) {
      s += v;
      s2 += v * v;
      n += 1.0;
    }
  const double var = s2 / n - (s / n) * (s / n);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("effective sample size") {
  CHECK(ess(std::vector<double>(150, -3.0)) == doctest::Approx(150.0).epsilon(1e-12));
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(ess(std::vector<double>{ninf, 0.0, ninf}) == doctest::Approx(1.0));
  CHECK(ess(std::vector<double>{std::log(0.5), std::log(0.25), std::log(0.25)}) ==
        doctest::Approx(8.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(ess(std::vector<double>{ninf, ninf}), NumericalError);
}

TEST_CASE("conditional effective sample size") {
  const std::vector<double> W(4, 0.25);
  CHECK(cess(W, std::vector<double>(4, -2.0)) == doctest::Approx(4.0).epsilon(1e-12));
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(cess(W, std::vector<double>{0.0, ninf, ninf, ninf}) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<double> l{-0.3, 1.2, 0.4, -2.0};
  std::vector<double> shifted = l;
  for (auto& v : shifted) v += 17.5;
  const std::vector<double> Wu{0.1, 0.2, 0.3, 0.4};
  CHECK(cess(Wu, shifted) == doctest::Approx(cess(Wu, l)).epsilon(1e-12));
}

TEST_CASE("find_next_temperature") {
  SUBCASE("equal losses jump straight to 1") {
    CHECK(find_next_temperature(std::vector<double>(5, 0.2), std::vector<double>(5, 3.0), 0.0, 4.9) == 1.0);
  }
  SUBCASE("demanding the full sample size still advances") {
    const std::vector<double> W{0.5, 0.5}, dl{0.0, 2.0};
    const double a = find_next_temperature(W, dl, 0.3, 2.0);
    CHECK(a > 0.3);
    CHECK(a <= 0.3 + 2e-6);
  }
  SUBCASE("matches a dense grid search") {
    const std::vector<double> W{0.5, 0.5}, dl{0.0, 2.0};
    const double a = find_next_temperature(W, dl, 0.0, 1.6);
    double grid = 0.0;
    for (int k = 0; k <= 100000; ++k) {
      const double alpha = k / 100000.0;
      if (cess(W, std::vector<double>{0.0, -2.0 * alpha}) >= 1.6) grid = alpha;
    }
    CHECK(std::abs(a - grid) < 1e-4);
    // (1 + v)^2 / (1 + v^2) = 1.6 at v = exp(-2 alpha) = 1/3.
    CHECK(a == doctest::Approx(std::log(3.0) / 2.0).epsilon(1e-5));
  }
  SUBCASE("non-finite losses are rejected") {
    const std::vector<double> W{0.5, 0.5}, dl{0.0, std::nan("")};
    CHECK_THROWS_AS(find_next_temperature(W, dl, 0.0, 1.0), NumericalError);
  }
}

TEST_CASE("reweight") {
  auto base = uniform_ensemble(std::vector<ParamVector>(4, ParamVector{0.0}));
  base.log_weights = {std::log(0.1), std::log(0.2), std::log(0.3), std::log(0.4)};
  const std::vector<double> dl{0.5, 2.0, -1.0, 3.0};

  SUBCASE("constant losses leave weights unchanged") {
    auto e = base;
    reweight(e, std::vector<double>(4, 7.0), 0.4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(e.log_weights[i] == doctest::Approx(base.log_weights[i]).epsilon(1e-14));
  }
  SUBCASE("zero step is the identity") {
    auto e = base;
    CHECK(reweight(e, dl, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
    for (std::size_t i = 0; i < 4; ++i) CHECK(e.log_weights[i] == doctest::Approx(base.log_weights[i]).epsilon(1e-14));
  }
  SUBCASE("two steps compose additively") {
    auto a = base, b = base;
    const double z1 = reweight(a, dl, 0.2, 1.5);
    const double z2 = reweight(a, dl, 0.3, 1.5);
    const double z = reweight(b, dl, 0.5, 1.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.log_weights[i] == doctest::Approx(b.log_weights[i]).epsilon(1e-13));
    CHECK(z1 + z2 == doctest::Approx(z).epsilon(1e-13));
  }
  SUBCASE("normalizer increment and normalization") {
    auto e = base;
    const double z = reweight(e, dl, 0.7);
    double direct = 0.0;
    for (std::size_t i = 0; i < 4; ++i) direct += std::exp(base.log_weights[i]) * std::exp(-0.7 * dl[i]);
    CHECK(z == doctest::Approx(std::log(direct)).epsilon(1e-13));
    CHECK(std::abs(weight_sum(e) - 1.0) < 1e-10);
  }
  SUBCASE("shifting the losses gives identical weights") {
    auto a = base, b = base;
    std::vector<double> shifted = dl;
    for (auto& v : shifted) v += 1e3;
    reweight(a, dl, 0.9);
    reweight(b, shifted, 0.9);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.log_weights[i] == doctest::Approx(b.log_weights[i]).epsilon(1e-12));
  }
}

TEST_CASE("systematic resampling") {
  auto eng = rng::stream(4, {});
  CHECK(counts_of(systematic_resample(std::vector<double>{0.5, 0.5}, 4, eng), 2) == std::vector<std::size_t>{2, 2});
  CHECK(systematic_resample(std::vector<double>{0.0, 1.0, 0.0}, 5, eng) == std::vector<std::size_t>(5, 1));

  // Every composition of 12 into 4 parts, several counts and offsets.
  for (int a = 0; a <= 12; ++a)
    for (int b = 0; a + b <= 12; ++b)
      for (int c = 0; a + b + c <= 12; ++c) {
        const std::vector<double> W{a / 12.0, b / 12.0, c / 12.0, (12 - a - b - c) / 12.0};
        for (std::size_t count : {1u, 3u, 7u, 12u, 25u}) {
          for (int rep = 0; rep < 3; ++rep) {
            const auto idx = systematic_resample(W, count, eng);
            REQUIRE(idx.size() == count);
            const auto cnt = counts_of(idx, 4);
            for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(cnt[i] - static_cast<double>(count) * W[i]) < 1.0);
          }
        }
      }
}

TEST_CASE("waste-free move") {
  auto eng = rng::stream(9, {});
  PriorSpec prior{PriorFamily::gaussian, 5, 2};
  const ConjugateTarget target({0.8, -0.4}, 20.0);

  SUBCASE("P = 1 is pure resampling") {
    auto e = uniform_ensemble(prior_sample(prior, 12, eng));
    e.log_weights = std::vector<double>(12, -10.0);
    e.log_weights[3] = 0.0;
    const auto before = e.particles;
    wastefree_move(e, target, 12, 1, toy_kernel(), 1, 1, 0);
    CHECK(e.size() == 12);
    for (const auto& p : e.particles) CHECK(p == before[3]);
    for (double lw : e.log_weights) CHECK(lw == doctest::Approx(-std::log(12.0)));
  }
  SUBCASE("pool size is M * P") {
    auto e = uniform_ensemble(prior_sample(prior, 150, eng));
    wastefree_move(e, target, 7, 3, toy_kernel(), 1, 1, 0);
    CHECK(e.size() == 21);
    CHECK(e.log_weights.size() == 21);
  }
  SUBCASE("serial and parallel execution agree bit for bit") {
    auto a = uniform_ensemble(prior_sample(prior, 150, eng));
    auto b = a;
    wastefree_move(a, target, 30, 5, toy_kernel(), 3, 2, 1, Execution::serial);
    wastefree_move(b, target, 30, 5, toy_kernel(), 3, 2, 1, Execution::parallel);
    CHECK(a.particles == b.particles);
  }
  SUBCASE("conjugate Gaussian target") {
    // Importance-weight prior draws by the likelihood, then move: the pooled
    // mean must match the analytic posterior mean n ybar / (1 + n).
    const std::size_t n_prior = 20000;
    auto e = uniform_ensemble(prior_sample(prior, n_prior, eng));
    std::vector<double> losses(n_prior);
    for (std::size_t k = 0; k < n_prior; ++k) {
      const auto& th = e.particles[k];
      losses[k] = 10.0 * ((th[0] - 0.8) * (th[0] - 0.8) + (th[1] + 0.4) * (th[1] + 0.4));
    }
    reweight(e, losses, 1.0);
    wastefree_move(e, target, 400, 5, toy_kernel(), 5, 1, 0);
    const double var = 1.0 / 21.0;
    const double se = std::sqrt(var / 400.0);
    for (std::size_t i = 0; i < 2; ++i) {
      double m = 0.0;
      for (const auto& p : e.particles) m += p[i];
      m /= static_cast<double>(e.size());
      const double expected = 20.0 * (i == 0 ? 0.8 : -0.4) / 21.0;
      CHECK(std::abs(m - expected) < 3.0 * se);
    }
  }
}

TEST_CASE("episode ranges") {
  const auto r1 = episode_range(1, 100, 10);
  CHECK(r1.begin == 10);
  CHECK(r1.end == 100);
  const auto r3 = episode_range(3, 100, 10);
  CHECK(r3.begin == 200);
  CHECK(r3.end == 300);
  CHECK_THROWS_AS(episode_range(0, 100, 10), std::invalid_argument);
}

TEST_CASE("configuration checks") {
  SMCConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.N = 149;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SMCConfig{};
  cfg.cess_threshold = 151;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("run_assimilation on a conjugate Gaussian model") {
  const auto model = testing::GaussianMeanModel::simulate({1.0, -0.5}, 1.0, 50, 3);
  SMCConfig cfg;
  cfg.tau = 10;
  cfg.kernel = toy_kernel();

  SUBCASE("tau longer than the data gives no episodes") {
    SMCConfig long_tau = cfg;
    long_tau.tau = 51;
    CHECK(run_assimilation(long_tau, model, {}, Execution::serial).empty());
  }
  SUBCASE("ladders, sizes, weights and hooks") {
    std::vector<std::size_t> seen;
    AssimilationHooks hooks;
    hooks.before_episode = [&](const ParticleEnsemble& e, std::size_t ep) {
      CHECK(e.episode_index + 1 == ep);
      seen.push_back(ep);
    };
    const auto res = run_assimilation(cfg, model, hooks, Execution::serial);
    REQUIRE(res.size() == 5);
    CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5});
    for (const auto& r : res) {
      CHECK(r.ensemble.size() == cfg.N);
      CHECK(std::abs(weight_sum(r.ensemble) - 1.0) < 1e-10);
      const auto& a = r.tempering.alphas;
      REQUIRE(!a.empty());
      CHECK(a.back() == 1.0);
      CHECK(a.front() > 0.0);
      for (std::size_t l = 1; l < a.size(); ++l) CHECK(a[l] > a[l - 1]);
    }
  }
  SUBCASE("deterministic and schedule independent") {
    const auto a = run_assimilation(cfg, model, {}, Execution::serial);
    const auto b = run_assimilation(cfg, model, {}, Execution::parallel);
    CHECK(a.back().ensemble.particles == b.back().ensemble.particles);
    CHECK(a.back().tempering.alphas == b.back().tempering.alphas);
  }
  SUBCASE("resuming from an intermediate ensemble reproduces the run") {
    const auto full = run_assimilation(cfg, model, {}, Execution::serial);
    const auto tail = run_assimilation(cfg, model, full[1].ensemble, {}, Execution::serial);
    REQUIRE(tail.size() == 3);
    CHECK(tail.back().ensemble.particles == full.back().ensemble.particles);
  }
  SUBCASE("posterior moments across independent runs") {
    double var_ratio = 0.0;
    std::vector<double> errors;
    const std::size_t runs = 10;
    for (std::size_t s = 1; s <= runs; ++s) {
      SMCConfig c = cfg;
      c.seed = 100 + s;
      const auto res = run_assimilation(c, model, {}, Execution::serial);
      const auto& e = res.back().ensemble;
      const auto W = e.weights();
      for (std::size_t i = 0; i < 2; ++i) {
        double m = 0.0, v = 0.0;
        for (std::size_t k = 0; k < e.size(); ++k) m += W[k] * e.particles[k][i];
        for (std::size_t k = 0; k < e.size(); ++k) v += W[k] * (e.particles[k][i] - m) * (e.particles[k][i] - m);
        var_ratio += v / model.posterior_variance(50);
        errors.push_back(m - model.posterior_mean(50, i));
      }
    }
    var_ratio /= static_cast<double>(errors.size());
    const double bias = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
    double ss = 0.0;
    for (double d : errors) ss += (d - bias) * (d - bias);
    const double se = std::sqrt(ss / static_cast<double>(errors.size() - 1) / static_cast<double>(errors.size()));
    CHECK(std::abs(bias) < 3.0 * se);
    CHECK(std::abs(var_ratio - 1.0) < 0.15);
  }
}
