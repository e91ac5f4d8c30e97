#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pqda/autodiff.hpp"
#include "pqda/diagnostics.hpp"
#include "pqda/dgfm.hpp"
#include "pqda/kernel.hpp"
#include "pqda/parallel.hpp"
#include "pqda/random.hpp"
#include "pqda/scoring.hpp"
#include "pqda/timeseries.hpp"

namespace pqda::smc {

using ad::ParamVector;

enum class PriorFamily { gaussian, student_t };

struct PriorSpec {
  PriorFamily family = PriorFamily::gaussian;
  int dof = 5;  // student_t only; 3 or 5
  std::size_t dim = 0;

  void validate() const;
};

std::vector<ParamVector> prior_sample(const PriorSpec& spec, std::size_t n, rng::Engine& rng);
double prior_logpdf(const PriorSpec& spec, std::span<const double> theta);
/// grad += d(-log prior)/d theta.
void add_prior_gradient(const PriorSpec& spec, std::span<const double> theta, std::span<double> grad);

struct ParticleEnsemble {
  std::vector<ParamVector> particles;
  std::vector<double> log_weights;  // normalized: logsumexp == 0
  std::size_t episode_index = 0;

  std::size_t size() const { return particles.size(); }
  std::vector<double> weights() const;
};

struct TemperingRecord {
  std::vector<double> alphas;
  std::vector<double> cess_values;
  double log_normalizer = 0.0;
};

/// (sum w)^2 / sum w^2 of the weights exp(log_weights).
double ess(std::span<const double> log_weights);

/// N (sum W_i v_i)^2 / sum W_i v_i^2 with v_i = exp(l_i - max l).
double cess(std::span<const double> norm_weights, std::span<const double> incr_log_weights);

inline constexpr double temperature_tolerance = 1e-6;

/// Next temperature in (alpha_prev, 1] at which the CESS of the incremental
/// weights -gamma (alpha - alpha_prev) losses hits `threshold`; 1 if the CESS
/// at alpha = 1 is still at or above the threshold.
double find_next_temperature(std::span<const double> norm_weights, std::span<const double> episode_losses,
                             double alpha_prev, double threshold, double gamma = 1.0);

/// log_weights += -gamma * delta_alpha * losses, then renormalizes.
/// Returns log sum_i W_i exp(-gamma * delta_alpha * losses_i).
double reweight(ParticleEnsemble& ensemble, std::span<const double> episode_losses, double delta_alpha,
                double gamma = 1.0);

/// Systematic resampling with a single uniform offset.
std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t count, rng::Engine& rng);

/// Potential of the tempered target seen by the move kernel.
class TemperedTarget {
public:
  virtual ~TemperedTarget() = default;
  /// grad (zeroed by the caller) receives the stochastic gradient at theta
  /// for kernel step `step` of chain `chain`.
  virtual void gradient(std::span<const double> theta, std::size_t chain, std::size_t step,
                        std::span<double> grad) const = 0;
  /// Number of time points contributing to the potential.
  virtual double t_scale() const = 0;
};

/// Resamples M starting points by weight, runs a (P-1)-step kernel chain from
/// each and pools all M*P visited states with equal weights. Particle c*P+s
/// is step s of chain c.
void wastefree_move(ParticleEnsemble& ensemble, const TemperedTarget& target, std::size_t M, std::size_t P,
                    const kernel::KernelConfig& kernel_cfg, std::uint64_t seed, std::uint64_t episode,
                    std::uint64_t step, Execution exec = Execution::parallel);

/// A loss that decomposes over time points. Implementations must allow
/// concurrent calls.
class EpisodicModel {
public:
  virtual ~EpisodicModel() = default;
  virtual std::size_t dim() const = 0;
  /// Smallest time index with a defined loss term.
  virtual std::size_t first_index() const = 0;
  /// Exclusive end of the time points available for assimilation.
  virtual std::size_t available() const = 0;
  /// Sum of pointwise losses (without gamma) over [begin, end).
  virtual double loss(std::span<const double> theta, std::size_t begin, std::size_t end,
                      std::uint64_t noise_seed) const = 0;
  /// grad += sum_i weights[i] * grad of the pointwise loss at indices[i].
  virtual void accumulate_gradient(std::span<const double> theta, std::span<const std::size_t> indices,
                                   std::span<const double> weights, std::uint64_t noise_seed,
                                   std::span<double> grad) const = 0;
};

/// Energy-score prequential loss of the forecasting network on a series.
class PrequentialEnergyModel : public EpisodicModel {
public:
  PrequentialEnergyModel(dgfm::NetworkSpec spec, scoring::ScoreConfig score, const TimeSeries& series,
                         std::size_t available);

  std::size_t dim() const override { return dim_; }
  std::size_t first_index() const override { return spec_.window; }
  std::size_t available() const override { return available_; }
  double loss(std::span<const double> theta, std::size_t begin, std::size_t end,
              std::uint64_t noise_seed) const override;
  void accumulate_gradient(std::span<const double> theta, std::span<const std::size_t> indices,
                           std::span<const double> weights, std::uint64_t noise_seed,
                           std::span<double> grad) const override;

  const dgfm::NetworkSpec& spec() const { return spec_; }

private:
  dgfm::NetworkSpec spec_;
  scoring::ScoreConfig score_;
  const TimeSeries& series_;
  std::size_t available_;
  std::size_t dim_;
};

struct SMCConfig {
  std::size_t N = 150;
  std::size_t M = 30;
  std::size_t P = 5;
  std::size_t tau = 100;
  double cess_threshold = 75.0;
  PriorSpec prior;
  kernel::KernelConfig kernel;
  scoring::ScoreConfig score;
  std::size_t grad_batch = 100;
  // Upper bound on episodes to run; 0 means every complete episode.
  std::size_t max_episodes = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Time rows [begin, end) of a 1-based episode, clipped below at first_index.
struct EpisodeRange {
  std::size_t begin = 0, end = 0;
};
EpisodeRange episode_range(std::size_t episode, std::size_t tau, std::size_t first_index);
std::size_t episode_count(const SMCConfig& cfg, const EpisodicModel& model);

/// Potential -log prior + gamma [history + alpha * episode] with a subsampled
/// history gradient; noise and batches are keyed by (seed, episode, step,
/// chain, kernel step).
class EpisodeTarget : public TemperedTarget {
public:
  EpisodeTarget(const EpisodicModel& model, const SMCConfig& cfg, EpisodeRange history, EpisodeRange episode,
                double alpha, std::uint64_t episode_index, std::uint64_t step);
  void gradient(std::span<const double> theta, std::size_t chain, std::size_t kstep,
                std::span<double> grad) const override;
  double t_scale() const override;

private:
  const EpisodicModel& model_;
  const SMCConfig& cfg_;
  EpisodeRange history_, episode_;
  double alpha_;
  std::uint64_t episode_index_, step_;
};

struct EpisodeResult {
  ParticleEnsemble ensemble;
  TemperingRecord tempering;
  std::optional<diagnostics::MetricsReport> metrics;
};

struct AssimilationHooks {
  // Called with the ensemble about to enter the given (1-based) episode.
  std::function<void(const ParticleEnsemble&, std::size_t episode)> before_episode;
  // Optional per-episode diagnostics.
  std::function<std::optional<diagnostics::MetricsReport>(const ParticleEnsemble&, std::size_t episode)> evaluate;
  // Called once per finished episode, after evaluate.
  std::function<void(const EpisodeResult&)> after_episode;
};

ParticleEnsemble initial_ensemble(const SMCConfig& cfg);

/// Sweeps one episode's tempering ladder in place and returns its record.
TemperingRecord assimilate_episode(ParticleEnsemble& ensemble, const SMCConfig& cfg, const EpisodicModel& model,
                                   std::size_t episode, Execution exec = Execution::parallel);

/// Runs episodes start.episode_index + 1 .. episode_count, starting from `start`.
std::vector<EpisodeResult> run_assimilation(const SMCConfig& cfg, const EpisodicModel& model, ParticleEnsemble start,
                                            const AssimilationHooks& hooks = {},
                                            Execution exec = Execution::parallel);

/// Starts from the prior.
std::vector<EpisodeResult> run_assimilation(const SMCConfig& cfg, const EpisodicModel& model,
                                            const AssimilationHooks& hooks = {},
                                            Execution exec = Execution::parallel);

} // namespace pqda::smc
