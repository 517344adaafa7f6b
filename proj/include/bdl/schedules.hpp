#pragma once

// Noise schedules: discrete DDPM (beta, alpha, alpha-bar) with skip-noising from an
// intermediate step, and the rho-spaced EDM sigma ladder with additive skip-noising.

#include <cmath>
#include <string>

#include "bdl/rng.hpp"
#include "bdl/tensor.hpp"

namespace bdl {

struct DdpmSchedule {
  // Index t runs 1..T; element 0 of alpha_bars is the t = 0 value (1.0).
  std::vector<double> betas;       // size T, betas[t-1] = beta_t
  std::vector<double> alphas;      // size T
  std::vector<double> alpha_bars;  // size T + 1
  std::vector<double> log_alpha_bars;

  std::size_t steps() const noexcept { return betas.size(); }
  double beta(std::size_t t) const { return betas.at(t - 1); }
  double alpha(std::size_t t) const { return alphas.at(t - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bars.at(t); }
  /// 1 - abar_t without cancellation for tiny betas.
  double one_minus_alpha_bar(std::size_t t) const { return -std::expm1(log_alpha_bars.at(t)); }

  /// Equivalent variance-exploding noise level: x_t / sqrt(abar_t) = x_0 + sigma_t * eps.
  double sigma(std::size_t t) const {
    return std::sqrt(one_minus_alpha_bar(t) / alpha_bar(t));
  }

  static DdpmSchedule from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ParameterError("DDPM schedule needs at least one step");
    DdpmSchedule s;
    s.alpha_bars.assign(betas.size() + 1, 1.0);
    s.log_alpha_bars.assign(betas.size() + 1, 0.0);
    for (std::size_t i = 0; i < betas.size(); ++i) {
      if (!(betas[i] >= 0.0 && betas[i] < 1.0)) throw ParameterError("beta must lie in [0, 1)");
      s.alphas.push_back(1.0 - betas[i]);
      s.alpha_bars[i + 1] = s.alpha_bars[i] * s.alphas.back();
      s.log_alpha_bars[i + 1] = s.log_alpha_bars[i] + std::log1p(-betas[i]);
    }
    s.betas = std::move(betas);
    return s;
  }
};

/// Linear betas from beta_start to beta_end inclusive.
inline DdpmSchedule make_ddpm(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ParameterError("make_ddpm: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ParameterError("make_ddpm: need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i)
    betas[i] = steps == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
  return DdpmSchedule::from_betas(std::move(betas));
}

/// x'_tau = sqrt(abar_tau) x0' + sqrt(1 - abar_tau) eps with an explicit eps.
inline Tensor ddpm_skip_noise(const Tensor& x0p, std::size_t tau, const DdpmSchedule& sched, const Tensor& eps) {
  if (tau > sched.steps()) throw ParameterError("ddpm_skip_noise: tau out of range");
  if (tau == 0) return x0p;
  if (!eps.same_shape(x0p)) throw ShapeError("ddpm_skip_noise: eps shape mismatch");
  const double ab = sched.alpha_bar(tau);
  const auto a = static_cast<float>(std::sqrt(ab)), b = static_cast<float>(std::sqrt(sched.one_minus_alpha_bar(tau)));
  Tensor out = x0p;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0p[i] + b * eps[i];
  return out;
}

inline Tensor ddpm_skip_noise(const Tensor& x0p, std::size_t tau, const DdpmSchedule& sched, RngStream& rng) {
  if (tau > sched.steps()) throw ParameterError("ddpm_skip_noise: tau out of range");
  if (tau == 0) return x0p;
  return ddpm_skip_noise(x0p, tau, sched, gaussian_noise(rng, x0p.dims()));
}

struct EdmSchedule {
  std::size_t n_steps = 0;
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  double rho = 7.0;
  std::vector<double> sigmas;  // n_steps + 1 entries, last is 0
};

/// rho-spaced ladder sigma_i = (smax^(1/rho) + i/(n-1) (smin^(1/rho) - smax^(1/rho)))^rho, then 0.
inline EdmSchedule make_edm(std::size_t n_steps, double sigma_max, double sigma_min, double rho) {
  if (n_steps < 1) throw ParameterError("make_edm: n_steps must be >= 1");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw ParameterError("make_edm: need 0 < sigma_min < sigma_max");
  if (!(rho >= 1.0)) throw ParameterError("make_edm: rho must be >= 1");
  EdmSchedule s{n_steps, sigma_max, sigma_min, rho, {}};
  if (n_steps == 1) {
    s.sigmas = {sigma_max, 0.0};
    return s;
  }
  const double hi = std::pow(sigma_max, 1.0 / rho), lo = std::pow(sigma_min, 1.0 / rho);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n_steps - 1);
    s.sigmas.push_back(std::pow(hi + f * (lo - hi), rho));
  }
  s.sigmas.front() = sigma_max;
  s.sigmas[n_steps - 1] = sigma_min;
  s.sigmas.push_back(0.0);
  return s;
}

/// Lower end of the ladder for a skip-started run: keeps at least a 15x span
/// below sigma_max when sigma_max is close to the default sigma_min.
inline double skip_sigma_min(double sigma_max, double sigma_min_default = 0.002) {
  return std::min(sigma_min_default, sigma_max / 15.0);
}

/// Ladder for an EDM run that starts from a noised initial image at sigma_max.
inline EdmSchedule make_skip_edm(std::size_t n_steps, double sigma_max, double sigma_min_default = 0.002,
                                 double rho = 7.0) {
  return make_edm(n_steps, sigma_max, skip_sigma_min(sigma_max, sigma_min_default), rho);
}

/// Variance-exploding skip noise: x0' + sigma_start * eps.
inline Tensor edm_skip_noise(const Tensor& x0p, double sigma_start, RngStream& rng) {
  if (!(sigma_start >= 0.0)) throw ParameterError("edm_skip_noise: sigma_start must be >= 0");
  if (sigma_start == 0.0) return x0p;
  Tensor out = x0p;
  out.axpy(static_cast<float>(sigma_start), gaussian_noise(rng, x0p.dims()));
  return out;
}

}  // namespace bdl
