#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pqda/autodiff.hpp"
#include "pqda/dgfm.hpp"
#include "pqda/matrix.hpp"
#include "pqda/timeseries.hpp"

namespace pqda::scoring {

struct ScoreConfig {
  double beta = 1.0;
  std::size_t m = 10;   // forecast draws per score evaluation
  double gamma = 1.0;   // loss temperature

  void validate() const;
};

/// Unbiased energy-score estimate from the rows of `samples`:
/// (2/m) sum_j |x_j - y|^beta - 1/(m(m-1)) sum_{j != k} |x_j - x_k|^beta.
double energy_score_estimate(const Matrix& samples, std::span<const double> y, double beta);

/// Records the same estimator on a tape and returns its scalar node.
ad::Var record_energy_score(ad::Tape& tape, std::span<const ad::Var> forecasts, std::span<const double> y,
                            double beta);

/// Fills an m x noise_dim block with the frozen noise used for time index t.
/// The stream depends only on (noise_seed, t), so any two computations that
/// share a noise_seed see identical forecast noise at every t.
void frozen_noise(std::uint64_t noise_seed, std::size_t t, std::span<double> out);

/// Per-thread evaluator of prequential losses and their gradients.
///
/// Time indices are 0-based rows of the series; index t is scored from the
/// window of rows [t - window, t), so every index must be >= window.
class PrequentialScorer {
public:
  PrequentialScorer(const dgfm::NetworkSpec& spec, const ScoreConfig& cfg);

  const ScoreConfig& config() const { return cfg_; }

  /// Energy-score estimate at one time index (no gamma).
  double pointwise(std::span<const double> params, const TimeSeries& series, std::size_t t,
                   std::uint64_t noise_seed);

  /// gamma * sum over t in [begin, end) of the pointwise score.
  double loss(std::span<const double> params, const TimeSeries& series, std::size_t begin, std::size_t end,
              std::uint64_t noise_seed);

  /// grad += sum_i weights[i] * d pointwise(indices[i]) / d params.
  void accumulate_gradient(std::span<const double> params, const TimeSeries& series,
                           std::span<const std::size_t> indices, std::span<const double> weights,
                           std::uint64_t noise_seed, std::span<double> grad);

private:
  void check_index(const TimeSeries& series, std::size_t t) const;

  dgfm::NetworkSpec spec_;
  ScoreConfig cfg_;
  dgfm::Forecaster forecaster_;
  ad::Tape tape_;
  std::vector<double> hidden_, noise_;
  Matrix samples_;
  std::vector<ad::Var> vars_;
};

double prequential_loss(const dgfm::ForecastModel& model, const TimeSeries& series, std::size_t begin,
                        std::size_t end, const ScoreConfig& cfg, std::uint64_t noise_seed);

ad::ParamVector loss_gradient(const dgfm::ForecastModel& model, const TimeSeries& series,
                              std::span<const std::size_t> indices, std::span<const double> weights,
                              const ScoreConfig& cfg, std::uint64_t noise_seed);

} // namespace pqda::scoring
