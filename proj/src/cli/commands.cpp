#include <algorithm>

#include "pqda/cli.hpp"
#include "pqda/errors.hpp"

namespace pqda::cli {

namespace {

TimeSeries load_series(const ExperimentConfig& cfg) {
  const fs::path path = cfg.series_path();
  TimeSeries s = parse_series_csv(read_file(path));
  if (s.dim() != cfg.lorenz.K) {
    throw ConfigError(path.string() + " has " + std::to_string(s.dim()) + " components but lorenz.K is " +
                      std::to_string(cfg.lorenz.K));
  }
  return s;
}

std::size_t planned_episodes(const ExperimentConfig& cfg, const TimeSeries& series) {
  std::size_t n = series.train_end / cfg.smc.tau;
  if (cfg.smc.max_episodes > 0) n = std::min(n, cfg.smc.max_episodes);
  return n;
}

std::vector<diagnostics::ForecastRecord> enkf_records(const enkf::FilterRecord& rec, const TimeSeries& series,
                                                      const enkf::EnKFConfig& ecfg, std::uint64_t seed,
                                                      smc::EpisodeRange range) {
  std::vector<diagnostics::ForecastRecord> out;
  out.reserve(range.end - range.begin);
  for (std::size_t t = range.begin; t < range.end; ++t) {
    diagnostics::ForecastRecord r;
    r.draws = enkf::observation_draws(rec.predictive.at(t - rec.first_index), ecfg.obs_noise_var, seed, t);
    const auto obs = series.observations.row(t);
    r.observation.assign(obs.begin(), obs.end());
    out.push_back(std::move(r));
  }
  return out;
}

} // namespace

smc::EpisodeRange evaluation_range(const ExperimentConfig& cfg, std::size_t episode, std::size_t series_length,
                                   std::size_t train_end) {
  smc::EpisodeRange r;
  if (cfg.diagnostics.test_range == TestRange::next_episode) {
    r = {cfg.smc.tau * episode, cfg.smc.tau * (episode + 1)};
  } else {
    r = {train_end, train_end + cfg.test_length};
  }
  r.begin = std::max(r.begin, cfg.network.window);
  r.end = std::min(r.end, series_length);
  if (r.begin >= r.end) return {};
  return r;
}

fs::path cmd_simulate(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  DirectoryLock lock(cfg.out);
  const fs::path path = cfg.series_path();
  if (fs::exists(path) && !opts.force) {
    throw IoError(path.string() + " already exists; pass --force to overwrite");
  }
  const TimeSeries series = lorenz96::generate_dataset(cfg.lorenz, cfg.sim);
  write_file_atomic(path, series_csv(series, config_hash(cfg)));
  return path;
}

std::vector<MetricsRow> cmd_assimilate(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path out(cfg.out);
  DirectoryLock lock(out);
  const TimeSeries series = load_series(cfg);
  const std::string hash = config_hash(cfg);
  const dgfm::NetworkSpec spec = cfg.network_spec();
  smc::SMCConfig scfg = cfg.smc_config();
  const smc::PrequentialEnergyModel model(spec, cfg.score, series, series.train_end);
  scfg.prior.dim = model.dim();

  Checkpoint state;
  state.seed = cfg.seed;
  state.config_hash = hash;
  const auto latest = latest_checkpoint(out);
  if (latest && opts.resume) {
    Checkpoint cp = read_checkpoint(*latest);
    if (cp.config_hash != hash) {
      throw ConfigError(latest->string() + " was written with config " + cp.config_hash + ", current config is " +
                        hash);
    }
    if (cp.ensemble.size() != scfg.N || cp.ensemble.particles[0].size() != model.dim()) {
      throw IoError(latest->string() + ": ensemble shape does not match the config");
    }
    state = std::move(cp);
  } else {
    if (latest && !opts.force) {
      throw IoError(out.string() + " already holds checkpoints; pass --resume to continue or --force to restart");
    }
    fs::remove_all(out / "checkpoints");
    state.ensemble = smc::initial_ensemble(scfg);
    write_checkpoint(checkpoint_path(out, 0), state);
  }
  write_file_atomic(out / "config.txt", canonical_config(cfg));

  auto flush_csvs = [&] {
    write_file_atomic(out / "metrics.csv", metrics_csv(state.metrics, hash, "pp", cfg.diagnostics.test_range));
    write_file_atomic(out / "tempering.csv", tempering_csv(state.tempering, hash));
  };

  std::size_t last = planned_episodes(cfg, series);
  if (opts.stop_after) last = std::min(last, state.ensemble.episode_index + *opts.stop_after);
  if (last <= state.ensemble.episode_index) {
    flush_csvs();
    return state.metrics;
  }
  scfg.max_episodes = last;

  smc::AssimilationHooks hooks;
  hooks.evaluate = [&](const smc::ParticleEnsemble& ens,
                       std::size_t episode) -> std::optional<diagnostics::MetricsReport> {
    const auto range = evaluation_range(cfg, episode, series.length(), series.train_end);
    if (range.begin >= range.end) return std::nullopt;
    const auto w = ens.weights();
    auto rep = diagnostics::evaluate_posterior(ens.particles, w, spec, series, range.begin, range.end,
                                               cfg.diagnostics.m_pred,
                                               rng::derive(cfg.seed, {rng::evaluation, episode}), opts.exec);
    rep.episode_index = episode;
    return rep;
  };
  hooks.after_episode = [&](const smc::EpisodeResult& res) {
    const std::size_t episode = res.ensemble.episode_index;
    if (res.metrics) state.metrics.push_back(to_row(*res.metrics));
    for (std::size_t s = 0; s < res.tempering.alphas.size(); ++s) {
      state.tempering.push_back({episode, s, res.tempering.alphas[s], res.tempering.cess_values[s]});
    }
    state.ensemble = res.ensemble;
    flush_csvs();
    write_checkpoint(checkpoint_path(out, episode), state);
  };
  smc::run_assimilation(scfg, model, state.ensemble, hooks, opts.exec);
  flush_csvs();
  return state.metrics;
}

std::vector<MetricsRow> cmd_enkf(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path out(cfg.out);
  DirectoryLock lock(out);
  const TimeSeries series = load_series(cfg);
  const std::string hash = config_hash(cfg);
  const enkf::EnKFConfig ecfg = cfg.enkf_config();

  std::vector<std::pair<std::size_t, smc::EpisodeRange>> ranges;
  const std::size_t episodes = planned_episodes(cfg, series);
  for (std::size_t i = 1; i <= episodes; ++i) {
    const auto r = evaluation_range(cfg, i, series.length(), series.train_end);
    if (r.begin < r.end) ranges.emplace_back(i, r);
  }

  std::vector<MetricsRow> rows;
  if (!ranges.empty()) {
    std::size_t lo = ranges.front().second.begin, hi = ranges.front().second.end;
    for (const auto& [i, r] : ranges) {
      lo = std::min(lo, r.begin);
      hi = std::max(hi, r.end);
    }
    const auto rec = enkf::run_filter(series, ecfg, cfg.seed, lo, hi, opts.exec);
    std::optional<MetricsRow> shared;
    for (const auto& [i, r] : ranges) {
      // The filter does not depend on the episode, so identical ranges share one evaluation.
      if (!shared || shared->range_begin != r.begin || shared->range_end != r.end) {
        const auto records = enkf_records(rec, series, ecfg, cfg.seed, r);
        auto rep = diagnostics::summarize(records);
        rep.range_begin = r.begin;
        rep.range_end = r.end;
        shared = to_row(rep);
      }
      MetricsRow row = *shared;
      row.episode_index = i;
      rows.push_back(row);
    }
  }
  write_file_atomic(out / "enkf_metrics.csv", metrics_csv(rows, hash, "enkf", cfg.diagnostics.test_range));
  return rows;
}

MetricsRow cmd_evaluate(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path out(cfg.out);
  DirectoryLock lock(out);
  const TimeSeries series = load_series(cfg);
  const std::string hash = config_hash(cfg);
  const auto latest = latest_checkpoint(out);
  if (!latest) throw IoError("no checkpoint under " + (out / "checkpoints").string());
  const Checkpoint cp = read_checkpoint(*latest);
  if (cp.config_hash != hash) {
    throw ConfigError(latest->string() + " was written with config " + cp.config_hash + ", current config is " + hash);
  }
  ExperimentConfig holdout = cfg;
  holdout.diagnostics.test_range = TestRange::holdout;
  const auto range = evaluation_range(holdout, 0, series.length(), series.train_end);
  if (range.begin >= range.end) throw ConfigError("holdout range is empty; check sim.test_length");
  const auto w = cp.ensemble.weights();
  auto rep = diagnostics::evaluate_posterior(cp.ensemble.particles, w, cfg.network_spec(), series, range.begin,
                                             range.end, cfg.diagnostics.m_pred,
                                             rng::derive(cfg.seed, {rng::evaluation, 0}), opts.exec);
  rep.episode_index = cp.ensemble.episode_index;
  const MetricsRow row = to_row(rep);
  write_file_atomic(out / "evaluation.csv", metrics_csv({row}, hash, "pp", TestRange::holdout));
  return row;
}

} // namespace pqda::cli
