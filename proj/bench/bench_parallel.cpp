// Serial reference path against the OpenMP path for the four parallel
// kernels: particle losses, move chains, EnKF member propagation and
// posterior-predictive evaluation. Argument 0 selects serial, 1 parallel.

#include <benchmark/benchmark.h>

#include "pqda/diagnostics.hpp"
#include "pqda/enkf.hpp"
#include "pqda/lorenz96.hpp"
#include "pqda/smc.hpp"

using namespace pqda;

namespace {

Execution mode(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::serial : Execution::parallel;
}

// Shared short Lorenz-96 series, generated once.
const TimeSeries& series() {
  static const TimeSeries s = [] {
    lorenz96::SimConfig sim;
    sim.duration = 100.0;
    sim.burn_in = 1.0;
    return lorenz96::generate_dataset(lorenz96::L96Params{}, sim);
  }();
  return s;
}

struct Setup {
  dgfm::NetworkSpec spec;
  smc::SMCConfig cfg;
  smc::PrequentialEnergyModel model;
  smc::ParticleEnsemble ensemble;

  Setup() : model(spec, cfg.score, series(), series().train_end) {
    cfg.kernel.eta = 1e-3;
    cfg.kernel.lambda = 1.0;
    cfg.prior.dim = model.dim();
    ensemble = smc::initial_ensemble(cfg);
  }
};

Setup& setup() {
  static Setup s;
  return s;
}

void BM_ParticleLosses(benchmark::State& state) {
  auto& s = setup();
  const auto exec = mode(state);
  std::vector<double> losses(s.ensemble.size());
  for (auto _ : state) {
    for_each_index(exec, s.ensemble.size(), [&](std::size_t i) {
      losses[i] = s.model.loss(s.ensemble.particles[i], 100, 200, 7);
    });
    benchmark::DoNotOptimize(losses.data());
  }
}

void BM_WasteFreeMove(benchmark::State& state) {
  auto& s = setup();
  const auto exec = mode(state);
  const smc::EpisodeRange hist{s.spec.window, 100}, ep{100, 200};
  const smc::EpisodeTarget target(s.model, s.cfg, hist, ep, 0.5, 2, 0);
  for (auto _ : state) {
    smc::ParticleEnsemble e = s.ensemble;
    smc::wastefree_move(e, target, s.cfg.M, s.cfg.P, s.cfg.kernel, s.cfg.seed, 2, 0, exec);
    benchmark::DoNotOptimize(e.particles.data());
  }
}

void BM_EnKFForecast(benchmark::State& state) {
  const auto exec = mode(state);
  enkf::EnKFConfig cfg;
  cfg.ensemble_size = 400;
  const auto ens = enkf::initial_ensemble(series().observations.row(0), cfg, 3);
  for (auto _ : state) {
    auto out = enkf::forecast_step(ens, cfg, 3, 1, exec);
    benchmark::DoNotOptimize(out.flat().data());
  }
}

void BM_PosteriorPredictive(benchmark::State& state) {
  auto& s = setup();
  const auto exec = mode(state);
  const auto w = s.ensemble.weights();
  for (auto _ : state) {
    auto rep = diagnostics::evaluate_posterior(s.ensemble.particles, w, s.spec, series(), 100, 200, 100, 5, exec);
    benchmark::DoNotOptimize(rep.nrmse);
  }
}

} // namespace

BENCHMARK(BM_ParticleLosses)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_WasteFreeMove)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EnKFForecast)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_PosteriorPredictive)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
