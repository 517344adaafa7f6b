#pragma once

// Reverse-process engines: DDPM ancestral sampling from an intermediate step,
// the EDM Heun sampler, and consistency-model multistep sampling.

#include <chrono>
#include <ostream>

#include "bdl/denoiser.hpp"
#include "bdl/schedules.hpp"

namespace bdl {

struct TraceStep {
  std::size_t step = 0;
  double sigma = 0.0;         // noise level at the start of the step (DDPM: equivalent sigma_t)
  std::uint64_t checksum = 0; // of the pre-step state
  std::size_t calls = 0;      // denoiser evaluations made in this step
  double ms = 0.0;
};

struct SamplerTrace {
  std::vector<TraceStep> steps;

  std::size_t total_calls() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.calls;
    return n;
  }
  double total_ms() const {
    double t = 0.0;
    for (const auto& s : steps) t += s.ms;
    return t;
  }
  void write_csv(std::ostream& os, const std::string& hash = {}) const {
    const std::string pre = hash.empty() ? "" : hash + ",";
    os << (hash.empty() ? "" : "config_hash,") << "step,sigma,calls,ms\n";
    os.precision(10);
    for (const auto& s : steps) os << pre << s.step << ',' << s.sigma << ',' << s.calls << ',' << s.ms << '\n';
  }
};

namespace detail {

class StepTimer {
 public:
  StepTimer(SamplerTrace* trace, std::size_t step, double sigma, const Tensor& x) : trace_(trace) {
    if (!trace_) return;
    rec_ = {step, sigma, checksum(x), 0, 0.0};
    t0_ = std::chrono::steady_clock::now();
  }
  void call() { ++rec_.calls; }
  void finish() {
    if (!trace_) return;
    rec_.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count();
    trace_->steps.push_back(rec_);
  }

 private:
  SamplerTrace* trace_;
  TraceStep rec_{};
  std::chrono::steady_clock::time_point t0_{};
};

inline void require_finite(const Tensor& x, const char* where, std::size_t step) {
  if (!x.all_finite()) throw NumericalError(std::string(where) + ": non-finite state at step " + std::to_string(step));
}

}  // namespace detail

enum class DdpmVariance { beta, beta_tilde };

struct DdpmOptions {
  DdpmVariance variance = DdpmVariance::beta;
  bool inject_noise = true;  // false: deterministic posterior-mean steps
};

/// Ancestral DDPM from step tau down to 1. The denoiser is queried in its
/// variance-exploding form, D(x_t / sqrt(abar_t); sigma_t), and eps-hat is
/// recovered from it. The last step returns the x0 estimate.
inline Tensor ddpm_reverse(const Tensor& x_tau, std::size_t tau, const DdpmSchedule& sched,
                           const DenoiserInterface& D, const ConditioningFeatures* cond, RngStream& rng,
                           const DdpmOptions& opt = {}, SamplerTrace* trace = nullptr) {
  if (tau < 1 || tau > sched.steps()) throw ParameterError("ddpm_reverse: need 1 <= tau <= T");
  Tensor x = x_tau;
  for (std::size_t t = tau; t >= 1; --t) {
    const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t - 1);
    const double one_m = sched.one_minus_alpha_bar(t), one_m_prev = sched.one_minus_alpha_bar(t - 1);
    detail::StepTimer timer(trace, tau - t, one_m > 0.0 ? sched.sigma(t) : 0.0, x);
    if (one_m <= 0.0) {
      // noiseless step: the state is already clean
      timer.finish();
      continue;
    }
    Tensor scaled = x * static_cast<float>(1.0 / std::sqrt(ab));
    const Tensor x0_hat = D.evaluate(scaled, sched.sigma(t), cond);
    timer.call();
    if (!x0_hat.same_shape(x)) throw ShapeError("ddpm_reverse: denoiser changed the shape");
    if (t == 1) {
      x = x0_hat;
    } else {
      // eps-hat = (x_t - sqrt(abar) x0) / sqrt(1 - abar); the posterior mean below is the same update
      const double beta = sched.beta(t);
      const double c0 = std::sqrt(ab_prev) * beta / one_m;
      const double ct = std::sqrt(sched.alpha(t)) * one_m_prev / one_m;
      const double var = opt.variance == DdpmVariance::beta ? beta : beta * one_m_prev / one_m;
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(c0 * x0_hat[i] + ct * x[i]);
      if (opt.inject_noise && var > 0.0) x.axpy(static_cast<float>(std::sqrt(var)), gaussian_noise(rng, x.dims()));
    }
    detail::require_finite(x, "ddpm_reverse", tau - t);
    timer.finish();
  }
  return x;
}

struct HeunOptions {
  double churn = 0.0;
  double s_tmin = 0.0;
  double s_tmax = std::numeric_limits<double>::infinity();
  double s_noise = 1.0;
  bool second_order = true;  // false: Euler only
};

/// EDM sampler over sched.sigmas; x_init must already be at sigma_0.
/// Makes 2 n - 1 denoiser calls when churn = 0 and second_order is on.
inline Tensor edm_heun_sample(const Tensor& x_init, const EdmSchedule& sched, const DenoiserInterface& D,
                              const ConditioningFeatures* cond, RngStream& rng, const HeunOptions& opt = {},
                              SamplerTrace* trace = nullptr) {
  if (sched.sigmas.size() < 2) throw ParameterError("edm_heun_sample: empty schedule");
  if (!(opt.churn >= 0.0)) throw ParameterError("edm_heun_sample: churn must be >= 0");
  const std::size_t n = sched.sigmas.size() - 1;
  Tensor x = x_init;
  for (std::size_t i = 0; i < n; ++i) {
    const double s_cur = sched.sigmas[i], s_next = sched.sigmas[i + 1];
    detail::StepTimer timer(trace, i, s_cur, x);
    double gamma = 0.0;
    if (opt.churn > 0.0 && s_cur >= opt.s_tmin && s_cur <= opt.s_tmax)
      gamma = std::min(opt.churn / static_cast<double>(n), std::sqrt(2.0) - 1.0);
    const double s_hat = s_cur * (1.0 + gamma);
    if (gamma > 0.0)
      x.axpy(static_cast<float>(std::sqrt(s_hat * s_hat - s_cur * s_cur) * opt.s_noise), gaussian_noise(rng, x.dims()));

    const Tensor d_hat = D.evaluate(x, s_hat, cond);
    timer.call();
    if (!d_hat.same_shape(x)) throw ShapeError("edm_heun_sample: denoiser changed the shape");
    // slope dx/dsigma = (x - D) / sigma
    Tensor slope = x - d_hat;
    slope *= static_cast<float>(1.0 / s_hat);
    Tensor x_next = x;
    x_next.axpy(static_cast<float>(s_next - s_hat), slope);

    if (opt.second_order && s_next > 0.0) {
      const Tensor d_next = D.evaluate(x_next, s_next, cond);
      timer.call();
      Tensor slope2 = x_next - d_next;
      slope2 *= static_cast<float>(1.0 / s_next);
      x_next = x;
      const auto h = static_cast<float>(0.5 * (s_next - s_hat));
      x_next.axpy(h, slope);
      x_next.axpy(h, slope2);
    }
    x = std::move(x_next);
    detail::require_finite(x, "edm_heun_sample", i);
    timer.finish();
  }
  return x;
}

/// Consistency sampling: x = x0' + sigma_1 eps; x0-hat = f(x; sigma_k); re-noise to
/// sigma_{k+1} between evaluations. Exactly sigma_seq.size() student calls.
inline Tensor cm_sample(const Tensor& x0p, const DenoiserInterface& f, const std::vector<double>& sigma_seq,
                        const ConditioningFeatures* cond, RngStream& rng, SamplerTrace* trace = nullptr) {
  if (sigma_seq.empty()) throw ParameterError("cm_sample: empty sigma sequence");
  for (std::size_t k = 0; k < sigma_seq.size(); ++k) {
    if (!(sigma_seq[k] > 0.0)) throw ParameterError("cm_sample: sigmas must be positive");
    if (k && !(sigma_seq[k] < sigma_seq[k - 1])) throw ParameterError("cm_sample: sigmas must strictly decrease");
  }
  Tensor x = edm_skip_noise(x0p, sigma_seq[0], rng);
  Tensor x0_hat;
  for (std::size_t k = 0; k < sigma_seq.size(); ++k) {
    detail::StepTimer timer(trace, k, sigma_seq[k], x);
    x0_hat = f.evaluate(x, sigma_seq[k], cond);
    timer.call();
    detail::require_finite(x0_hat, "cm_sample", k);
    if (k + 1 < sigma_seq.size()) x = edm_skip_noise(x0_hat, sigma_seq[k + 1], rng);
    timer.finish();
  }
  return x0_hat;
}

/// Consistency ladder for T_CM steps: rho-spaced from sigma_max down to
/// sigma_max / 3^(T_CM - 1).
inline std::vector<double> cm_sigma_sequence(double sigma_max, std::size_t t_cm, double rho = 7.0) {
  if (t_cm < 1) throw ParameterError("cm_sigma_sequence: T_CM must be >= 1");
  if (!(sigma_max > 0.0)) throw ParameterError("cm_sigma_sequence: sigma_max must be > 0");
  if (t_cm == 1) return {sigma_max};
  const double stop = sigma_max / std::pow(3.0, static_cast<double>(t_cm - 1));
  const double hi = std::pow(sigma_max, 1.0 / rho), lo = std::pow(stop, 1.0 / rho);
  std::vector<double> seq;
  for (std::size_t k = 0; k < t_cm; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(t_cm - 1);
    seq.push_back(std::pow(hi + f * (lo - hi), rho));
  }
  seq.front() = sigma_max;
  seq.back() = stop;
  return seq;
}

}  // namespace bdl
