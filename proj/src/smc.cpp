#include "pqda/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pqda/errors.hpp"

namespace pqda::smc {

namespace {

double log_sum_exp(std::span<const double> x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

void require_finite(std::span<const double> x, const char* what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw NumericalError(std::string(what) + ": non-finite value at index " + std::to_string(i));
  }
}

} // namespace

// ---------------------------------------------------------------------------
// Priors

void PriorSpec::validate() const {
  if (family == PriorFamily::student_t && dof != 3 && dof != 5) {
    throw std::invalid_argument("PriorSpec: student_t prior supports 3 or 5 degrees of freedom");
  }
}

std::vector<ParamVector> prior_sample(const PriorSpec& spec, std::size_t n, rng::Engine& rng) {
  spec.validate();
  std::vector<ParamVector> out(n, ParamVector(spec.dim));
  if (spec.family == PriorFamily::gaussian) {
    for (auto& p : out) rng::fill_normal(rng, p);
  } else {
    std::student_t_distribution<double> t(spec.dof);
    for (auto& p : out)
      for (auto& v : p) v = t(rng);
  }
  return out;
}

double prior_logpdf(const PriorSpec& spec, std::span<const double> theta) {
  spec.validate();
  double acc = 0.0;
  if (spec.family == PriorFamily::gaussian) {
    for (double v : theta) acc += v * v;
    return -0.5 * acc - 0.5 * static_cast<double>(theta.size()) * std::log(2.0 * std::numbers::pi);
  }
  const double nu = spec.dof;
  const double norm = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
  for (double v : theta) acc += norm - 0.5 * (nu + 1.0) * std::log1p(v * v / nu);
  return acc;
}

void add_prior_gradient(const PriorSpec& spec, std::span<const double> theta, std::span<double> grad) {
  if (spec.family == PriorFamily::gaussian) {
    for (std::size_t i = 0; i < theta.size(); ++i) grad[i] += theta[i];
    return;
  }
  const double nu = spec.dof;
  for (std::size_t i = 0; i < theta.size(); ++i) grad[i] += (nu + 1.0) * theta[i] / (nu + theta[i] * theta[i]);
}

// ---------------------------------------------------------------------------
// Weights

std::vector<double> ParticleEnsemble::weights() const {
  std::vector<double> w(log_weights.size());
  const double lse = log_sum_exp(log_weights);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - lse);
  return w;
}

double ess(std::span<const double> log_weights) {
  if (log_weights.empty()) throw std::invalid_argument("ess: no weights");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : log_weights) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) throw NumericalError("ess: invalid log-weight");
    mx = std::max(mx, v);
  }
  if (!std::isfinite(mx)) throw NumericalError("ess: all weights are zero");
  double s = 0.0, s2 = 0.0;
  for (double v : log_weights) {
    const double w = std::exp(v - mx);
    s += w;
    s2 += w * w;
  }
  return s * s / s2;
}

double cess(std::span<const double> norm_weights, std::span<const double> incr_log_weights) {
  if (norm_weights.size() != incr_log_weights.size()) throw std::invalid_argument("cess: length mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : incr_log_weights) mx = std::max(mx, v);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < norm_weights.size(); ++i) {
    const double v = std::exp(incr_log_weights[i] - mx);
    num += norm_weights[i] * v;
    den += norm_weights[i] * v * v;
  }
  return static_cast<double>(norm_weights.size()) * num * num / den;
}

double find_next_temperature(std::span<const double> norm_weights, std::span<const double> episode_losses,
                             double alpha_prev, double threshold, double gamma) {
  if (!(alpha_prev < 1.0)) throw std::invalid_argument("find_next_temperature: alpha_prev must be < 1");
  require_finite(episode_losses, "find_next_temperature");
  std::vector<double> incr(episode_losses.size());
  auto cess_at = [&](double alpha) {
    for (std::size_t i = 0; i < incr.size(); ++i) incr[i] = -gamma * (alpha - alpha_prev) * episode_losses[i];
    return cess(norm_weights, incr);
  };
  if (cess_at(1.0) >= threshold) return 1.0;
  double lo = alpha_prev, hi = 1.0;
  while (hi - lo >= temperature_tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (cess_at(mid) >= threshold) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo > alpha_prev ? lo : hi;
}

double reweight(ParticleEnsemble& ensemble, std::span<const double> episode_losses, double delta_alpha,
                double gamma) {
  if (episode_losses.size() != ensemble.size()) throw std::invalid_argument("reweight: one loss per particle");
  if (delta_alpha < 0.0) throw std::invalid_argument("reweight: delta_alpha must be non-negative");
  require_finite(episode_losses, "reweight");
  // Shift by the minimum loss so the exponent never overflows.
  const double shift = *std::min_element(episode_losses.begin(), episode_losses.end());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    ensemble.log_weights[i] += -gamma * delta_alpha * (episode_losses[i] - shift);
  }
  const double lse = log_sum_exp(ensemble.log_weights);
  if (!std::isfinite(lse)) throw NumericalError("reweight: all weights vanished");
  for (auto& lw : ensemble.log_weights) lw -= lse;
  return lse - gamma * delta_alpha * shift;
}

std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t count, rng::Engine& rng) {
  if (weights.empty()) throw std::invalid_argument("systematic_resample: no weights");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double offset = unif(rng);
  std::vector<std::size_t> idx;
  idx.reserve(count);
  std::size_t j = 0;
  double cumulative = weights[0] / total;
  for (std::size_t i = 0; i < count; ++i) {
    const double position = (offset + static_cast<double>(i)) / static_cast<double>(count);
    while (position > cumulative && j + 1 < weights.size()) {
      ++j;
      cumulative += weights[j] / total;
    }
    idx.push_back(j);
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Moves

void wastefree_move(ParticleEnsemble& ensemble, const TemperedTarget& target, std::size_t M, std::size_t P,
                    const kernel::KernelConfig& kernel_cfg, std::uint64_t seed, std::uint64_t episode,
                    std::uint64_t step, Execution exec) {
  if (M == 0 || P == 0) throw std::invalid_argument("wastefree_move: M and P must be positive");
  auto res_rng = rng::stream(seed, {rng::resample, episode, step});
  const auto starts = systematic_resample(ensemble.weights(), M, res_rng);

  kernel::KernelConfig kcfg = kernel_cfg;
  kcfg.t_scale = target.t_scale();

  std::vector<ParamVector> pooled(M * P);
  for_each_index(exec, M, [&](std::size_t chain) {
    auto chain_rng = rng::stream(seed, {rng::chain, episode, step, chain});
    auto oracle = [&](std::span<const double> theta, std::size_t kstep, std::span<double> grad) {
      target.gradient(theta, chain, kstep, grad);
    };
    std::vector<ParamVector> visited;
    try {
      visited = kernel::run_chain(ensemble.particles[starts[chain]], oracle, P - 1, kcfg, chain_rng);
    } catch (const NumericalError& e) {
      throw NumericalError("chain " + std::to_string(chain) + ": " + e.what());
    }
    for (std::size_t s = 0; s < P; ++s) pooled[chain * P + s] = std::move(visited[s]);
  });
  ensemble.particles = std::move(pooled);
  ensemble.log_weights.assign(M * P, -std::log(static_cast<double>(M * P)));
}

// ---------------------------------------------------------------------------
// Prequential energy-score model

PrequentialEnergyModel::PrequentialEnergyModel(dgfm::NetworkSpec spec, scoring::ScoreConfig score,
                                               const TimeSeries& series, std::size_t available)
    : spec_(std::move(spec)),
      score_(score),
      series_(series),
      available_(std::min(available, series.length())),
      dim_(dgfm::param_count(spec_)) {
  score_.validate();
  if (series.dim() != spec_.obs_dim) throw std::invalid_argument("series dimension differs from network obs_dim");
}

double PrequentialEnergyModel::loss(std::span<const double> theta, std::size_t begin, std::size_t end,
                                    std::uint64_t noise_seed) const {
  scoring::ScoreConfig unit = score_;
  unit.gamma = 1.0;
  scoring::PrequentialScorer scorer(spec_, unit);
  return scorer.loss(theta, series_, begin, end, noise_seed);
}

void PrequentialEnergyModel::accumulate_gradient(std::span<const double> theta, std::span<const std::size_t> indices,
                                                 std::span<const double> weights, std::uint64_t noise_seed,
                                                 std::span<double> grad) const {
  scoring::PrequentialScorer scorer(spec_, score_);
  scorer.accumulate_gradient(theta, series_, indices, weights, noise_seed, grad);
}

// ---------------------------------------------------------------------------
// Episodes

void SMCConfig::validate() const {
  if (M == 0 || P == 0 || N != M * P) throw std::invalid_argument("SMCConfig: N must equal M * P");
  if (!(cess_threshold > 0.0 && cess_threshold <= static_cast<double>(N))) {
    throw std::invalid_argument("SMCConfig: cess_threshold must lie in (0, N]");
  }
  if (tau == 0) throw std::invalid_argument("SMCConfig: tau must be positive");
  if (grad_batch == 0) throw std::invalid_argument("SMCConfig: grad_batch must be positive");
  prior.validate();
  kernel.validate();
  score.validate();
}

EpisodeRange episode_range(std::size_t episode, std::size_t tau, std::size_t first_index) {
  if (episode == 0) throw std::invalid_argument("episode_range: episodes are 1-based");
  EpisodeRange r{tau * (episode - 1), tau * episode};
  r.begin = std::min(std::max(r.begin, first_index), r.end);
  return r;
}

std::size_t episode_count(const SMCConfig& cfg, const EpisodicModel& model) {
  std::size_t n = model.available() / cfg.tau;
  if (cfg.max_episodes > 0) n = std::min(n, cfg.max_episodes);
  return n;
}

EpisodeTarget::EpisodeTarget(const EpisodicModel& model, const SMCConfig& cfg, EpisodeRange history,
                             EpisodeRange episode, double alpha, std::uint64_t episode_index, std::uint64_t step)
    : model_(model), cfg_(cfg), history_(history), episode_(episode), alpha_(alpha),
      episode_index_(episode_index), step_(step) {}

double EpisodeTarget::t_scale() const {
  const double n = static_cast<double>((history_.end - history_.begin) + (episode_.end - episode_.begin));
  return std::max(1.0, n);
}

void EpisodeTarget::gradient(std::span<const double> theta, std::size_t chain, std::size_t kstep,
                             std::span<double> grad) const {
  add_prior_gradient(cfg_.prior, theta, grad);
  const double gamma = cfg_.score.gamma;
  const std::uint64_t noise_seed = rng::derive(cfg_.seed, {rng::loss_noise, episode_index_, step_, chain, kstep});

  std::vector<std::size_t> indices;
  std::vector<double> weights;
  const std::size_t ep_len = episode_.end - episode_.begin;
  for (std::size_t t = episode_.begin; t < episode_.end; ++t) indices.push_back(t);
  weights.assign(ep_len, gamma * alpha_);

  const std::size_t hist_len = history_.end - history_.begin;
  if (hist_len > 0) {
    if (hist_len <= cfg_.grad_batch) {
      for (std::size_t t = history_.begin; t < history_.end; ++t) indices.push_back(t);
      weights.resize(indices.size(), gamma);
    } else {
      // Uniform subsample without replacement, scaled to stay unbiased.
      auto eng = rng::stream(cfg_.seed, {rng::history_batch, episode_index_, step_, chain, kstep});
      std::vector<std::size_t> pool(hist_len);
      std::iota(pool.begin(), pool.end(), history_.begin);
      for (std::size_t i = 0; i < cfg_.grad_batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, hist_len - 1);
        std::swap(pool[i], pool[pick(eng)]);
      }
      std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg_.grad_batch));
      indices.insert(indices.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg_.grad_batch));
      const double scale = static_cast<double>(hist_len) / static_cast<double>(cfg_.grad_batch);
      weights.resize(indices.size(), gamma * scale);
    }
  }
  model_.accumulate_gradient(theta, indices, weights, noise_seed, grad);
}

ParticleEnsemble initial_ensemble(const SMCConfig& cfg) {
  auto eng = rng::stream(cfg.seed, {rng::prior_draw});
  ParticleEnsemble ens;
  ens.particles = prior_sample(cfg.prior, cfg.N, eng);
  ens.log_weights.assign(cfg.N, -std::log(static_cast<double>(cfg.N)));
  ens.episode_index = 0;
  return ens;
}

TemperingRecord assimilate_episode(ParticleEnsemble& ensemble, const SMCConfig& cfg, const EpisodicModel& model,
                                   std::size_t episode, Execution exec) {
  const EpisodeRange ep = episode_range(episode, cfg.tau, model.first_index());
  const EpisodeRange hist{model.first_index(), ep.begin};
  const double gamma = cfg.score.gamma;
  TemperingRecord rec;
  double alpha = 0.0;
  std::vector<double> losses(ensemble.size());
  for (std::uint64_t step = 0; alpha < 1.0; ++step) {
    const std::uint64_t noise_seed = rng::derive(cfg.seed, {rng::loss_noise, episode, step});
    for_each_index(exec, ensemble.size(), [&](std::size_t i) {
      losses[i] = model.loss(ensemble.particles[i], ep.begin, ep.end, noise_seed);
    });
    const auto W = ensemble.weights();
    const double next = find_next_temperature(W, losses, alpha, cfg.cess_threshold, gamma);
    std::vector<double> incr(losses.size());
    for (std::size_t i = 0; i < incr.size(); ++i) incr[i] = -gamma * (next - alpha) * losses[i];
    rec.cess_values.push_back(cess(W, incr));
    rec.log_normalizer += reweight(ensemble, losses, next - alpha, gamma);
    rec.alphas.push_back(next);
    const EpisodeTarget target(model, cfg, hist, ep, next, episode, step);
    wastefree_move(ensemble, target, cfg.M, cfg.P, cfg.kernel, cfg.seed, episode, step, exec);
    alpha = next;
  }
  ensemble.episode_index = episode;
  return rec;
}

std::vector<EpisodeResult> run_assimilation(const SMCConfig& cfg, const EpisodicModel& model, ParticleEnsemble start,
                                            const AssimilationHooks& hooks, Execution exec) {
  cfg.validate();
  if (start.size() != cfg.N) throw std::invalid_argument("run_assimilation: ensemble size differs from N");
  std::vector<EpisodeResult> results;
  const std::size_t last = episode_count(cfg, model);
  ParticleEnsemble ens = std::move(start);
  for (std::size_t episode = ens.episode_index + 1; episode <= last; ++episode) {
    if (hooks.before_episode) hooks.before_episode(ens, episode);
    EpisodeResult res;
    res.tempering = assimilate_episode(ens, cfg, model, episode, exec);
    if (hooks.evaluate) res.metrics = hooks.evaluate(ens, episode);
    res.ensemble = ens;
    if (hooks.after_episode) hooks.after_episode(res);
    results.push_back(std::move(res));
  }
  return results;
}

std::vector<EpisodeResult> run_assimilation(const SMCConfig& cfg, const EpisodicModel& model,
                                            const AssimilationHooks& hooks, Execution exec) {
  SMCConfig c = cfg;
  c.prior.dim = model.dim();
  return run_assimilation(c, model, initial_ensemble(c), hooks, exec);
}

} // namespace pqda::smc
