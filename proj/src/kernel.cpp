#include "pqda/kernel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pqda/errors.hpp"

namespace pqda::kernel {

void KernelConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("KernelConfig: eta must be positive");
  if (!(lambda > 0.0)) throw std::invalid_argument("KernelConfig: lambda must be positive");
  if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("KernelConfig: sigma must lie in (0, 1)");
  if (!(t_scale > 0.0)) throw std::invalid_argument("KernelConfig: t_scale must be positive");
}

KernelState kernel_init(std::span<const double> theta, const KernelConfig& cfg, rng::Engine& rng) {
  cfg.validate();
  const std::size_t p = theta.size();
  KernelState s;
  s.theta.assign(theta.begin(), theta.end());
  s.u.resize(p);
  rng::fill_normal(rng, s.u, std::sqrt(cfg.eta));
  s.alpha.assign(p, cfg.alpha0);
  s.v.assign(p, 0.0);
  s.g_prev.assign(p, 1.0 / std::sqrt(cfg.lambda));
  return s;
}

void kernel_step(KernelState& s, std::span<const double> grad, std::span<const double> zeta,
                 const KernelConfig& cfg) {
  const std::size_t p = s.theta.size();
  if (grad.size() != p || zeta.size() != p) throw std::invalid_argument("kernel_step: vector length mismatch");
  const double eta = cfg.eta;
  const double v_gain = (1.0 - cfg.sigma) / (cfg.t_scale * cfg.t_scale);
  const double noise_base = 2.0 * std::pow(eta, 1.5);
  for (std::size_t i = 0; i < p; ++i) {
    const double f = grad[i];
    if (!std::isfinite(f)) throw NumericalError("kernel_step: non-finite gradient at coordinate " + std::to_string(i));
    double& v = s.v[i];
    double& u = s.u[i];
    double& a = s.alpha[i];
    double& th = s.theta[i];

    v = cfg.sigma * v + v_gain * f * f;
    const double g = 1.0 / std::sqrt(cfg.lambda + std::sqrt(v));
    th += 0.5 * g * u;
    a += 0.5 * (u * u - eta);
    const double friction = std::exp(-0.5 * a);
    u *= friction;
    u = u - eta * g * f + std::sqrt(noise_base * s.g_prev[i]) * zeta[i];
    u *= friction;
    a += 0.5 * (u * u - eta);
    th += 0.5 * g * u;
    s.g_prev[i] = g;

    if (!std::isfinite(th) || !std::isfinite(u) || !std::isfinite(a)) {
      throw NumericalError("kernel_step: non-finite state at coordinate " + std::to_string(i));
    }
  }
}

void kernel_step(KernelState& state, std::span<const double> grad, const KernelConfig& cfg, rng::Engine& rng) {
  std::vector<double> zeta(state.theta.size());
  rng::fill_normal(rng, zeta);
  kernel_step(state, grad, zeta, cfg);
}

std::vector<ParamVector> run_chain(std::span<const double> theta_start, const GradientOracle& potential,
                                   std::size_t steps, const KernelConfig& cfg, rng::Engine& rng) {
  std::vector<ParamVector> visited;
  visited.reserve(steps + 1);
  visited.emplace_back(theta_start.begin(), theta_start.end());
  if (steps == 0) return visited;
  KernelState state = kernel_init(theta_start, cfg, rng);
  std::vector<double> grad(theta_start.size()), zeta(theta_start.size());
  for (std::size_t n = 0; n < steps; ++n) {
    try {
      std::fill(grad.begin(), grad.end(), 0.0);
      potential(state.theta, n, grad);
      rng::fill_normal(rng, zeta);
      kernel_step(state, grad, zeta, cfg);
    } catch (const NumericalError& e) {
      throw NumericalError("chain step " + std::to_string(n) + ": " + e.what());
    }
    visited.push_back(state.theta);
  }
  return visited;
}

} // namespace pqda::kernel
