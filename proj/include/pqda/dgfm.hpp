#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pqda/autodiff.hpp"
#include "pqda/matrix.hpp"
#include "pqda/random.hpp"

namespace pqda::dgfm {

using ad::ParamVector;

// Windowed GRU encoder -> [hidden, noise] -> dense chain forecaster.
struct NetworkSpec {
  std::size_t window = 10;
  std::size_t obs_dim = 8;
  std::size_t gru_hidden = 16;
  // Output widths of the dense layers; the last one must equal obs_dim.
  std::vector<std::size_t> dense_widths{45, 44, 8};
  std::size_t noise_dim = 1;

  void validate() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

std::size_t param_count(const NetworkSpec& spec);

// Offsets of every weight block inside a flat parameter vector.
//
// GRU gates are stored in (reset, update, candidate) order:
//   w_ih : 3H x I,  w_hh : 3H x H,  b_ih : 3H,  b_hh : 3H
// followed by each dense layer's weights (out x in) and bias (out).
struct Layout {
  struct Dense {
    std::size_t w, b, in, out;
  };
  std::size_t input = 0, hidden = 0;
  std::size_t w_ih = 0, w_hh = 0, b_ih = 0, b_hh = 0;
  std::vector<Dense> dense;
  std::size_t total = 0;

  explicit Layout(const NetworkSpec& spec);
};

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed, double scale);

class ForecastModel {
public:
  ForecastModel(NetworkSpec spec, ParamVector params);

  const NetworkSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }
  std::span<const double> params() const { return params_; }

private:
  NetworkSpec spec_;
  Layout layout_;
  ParamVector params_;
};

/// Evaluates the network for one (params, history, noise) triple. Buffers are
/// reused between calls; one Forecaster per thread.
class Forecaster {
public:
  explicit Forecaster(const NetworkSpec& spec);

  const NetworkSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }

  /// history is window x obs_dim, oldest row first. Writes gru_hidden values.
  void encode(std::span<const double> params, std::span<const double> history, std::span<double> hidden);
  /// Writes obs_dim values.
  void decode(std::span<const double> params, std::span<const double> hidden, std::span<const double> noise,
              std::span<double> out);

  void simulate(std::span<const double> params, std::span<const double> history, std::span<const double> noise,
                std::span<double> out);

private:
  NetworkSpec spec_;
  Layout layout_;
  std::vector<double> h_, gi_, gh_, a_, b_;
};

std::vector<double> simulate_forecast(const ForecastModel& model, std::span<const double> history,
                                      std::span<const double> noise);

/// m forecasts (m x obs_dim) from m independent standard-normal noise draws.
Matrix forecast_ensemble(const ForecastModel& model, std::span<const double> history, std::size_t m,
                         rng::Engine& rng);

/// Records the forward pass on a tape; parameters must already be bound.
ad::Var record_encode(ad::Tape& tape, const NetworkSpec& spec, const Layout& layout,
                      std::span<const double> history);
ad::Var record_decode(ad::Tape& tape, const Layout& layout, ad::Var hidden, std::span<const double> noise);

} // namespace pqda::dgfm
