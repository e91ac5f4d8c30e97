#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "pqda/autodiff.hpp"
#include "pqda/random.hpp"

namespace pqda::kernel {

using ad::ParamVector;

// Thermostat dynamics with an RMSprop-style diagonal preconditioner and a
// symmetric splitting of the position/momentum updates. No Metropolis step.
struct KernelConfig {
  double eta = 1e-6;     // learning rate
  double sigma = 0.99;   // preconditioner decay
  double lambda = 1e-8;  // preconditioner regularizer
  double alpha0 = 1e-2;  // initial thermostat value, every coordinate
  double t_scale = 1.0;  // gradient-scale normalizer in the v update

  void validate() const;
};

struct KernelState {
  ParamVector theta;
  std::vector<double> u;       // momentum
  std::vector<double> alpha;   // thermostat
  std::vector<double> v;       // squared-gradient moving average
  std::vector<double> g_prev;  // preconditioner of the previous step
};

KernelState kernel_init(std::span<const double> theta, const KernelConfig& cfg, rng::Engine& rng);

/// One update with caller-supplied injection noise zeta.
void kernel_step(KernelState& state, std::span<const double> grad, std::span<const double> zeta,
                 const KernelConfig& cfg);

/// One update drawing zeta ~ N(0, I) from rng.
void kernel_step(KernelState& state, std::span<const double> grad, const KernelConfig& cfg, rng::Engine& rng);

/// Writes the stochastic gradient of the potential at theta; `step` counts
/// kernel steps within the chain (0-based).
using GradientOracle = std::function<void(std::span<const double> theta, std::size_t step, std::span<double> grad)>;

/// kernel_init followed by `steps` (gradient, kernel_step) pairs. Returns the
/// start followed by every post-step position.
std::vector<ParamVector> run_chain(std::span<const double> theta_start, const GradientOracle& potential,
                                   std::size_t steps, const KernelConfig& cfg, rng::Engine& rng);

} // namespace pqda::kernel
