#pragma once

// Denoising score-matching training under the EDM loss weighting.

#include <cmath>
#include <functional>

#include "bdl/denoiser.hpp"

namespace bdl {

/// One training example: clean HR image, its burst features and the
/// deterministic initial SR estimate.
struct TrainingPair {
  Tensor hr;
  ConditioningFeatures cond;
  Tensor init;
};

struct TrainOptions {
  std::size_t steps = 2000;
  std::size_t batch_size = 4;
  double lr = 2e-3;
  double p_mean = std::log(0.02);
  double p_std = 1.0;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  std::uint64_t seed = 0;
  std::function<void(std::size_t step, double loss)> on_step;  // optional progress hook
};

struct TrainReport {
  std::vector<double> loss;  // batch-mean loss per step
};

/// Log-normal sigma, truncated to [lo, hi] by rejection.
inline double sample_log_normal_sigma(RngStream& rng, double p_mean, double p_std, double lo, double hi) {
  if (!(lo > 0.0 && lo < hi)) throw ParameterError("sigma range must satisfy 0 < lo < hi");
  for (int tries = 0; tries < 1000; ++tries) {
    const double s = std::exp(p_mean + p_std * rng.normal());
    if (s >= lo && s <= hi) return s;
  }
  return std::clamp(std::exp(p_mean), lo, hi);
}

/// Weighted MSE lambda(sigma) * mean((D(x0 + sigma eps) - x0)^2) with
/// lambda = (sigma^2 + sd^2) / (sigma sd)^2. Accumulates parameter gradients
/// scaled by `grad_scale`; returns the loss.
template <class M, class T>
double edm_loss_backward(M& model, const BasicTensor<T>& x0, double sigma, const BasicTensor<T>& eps,
                         const BasicConditioning<T>* cond, double grad_scale = 1.0) {
  const double sd = model.sigma_data();
  const double lambda = (sigma * sigma + sd * sd) / (sigma * sd * sigma * sd);
  BasicTensor<T> x = x0;
  x.axpy(static_cast<T>(sigma), eps);
  typename M::Cache cache;
  const BasicTensor<T> d = model.forward(x, sigma, cond, cache);
  const double n = static_cast<double>(x0.size());
  double se = 0.0;
  BasicTensor<T> dd = d;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = static_cast<double>(d[i]) - static_cast<double>(x0[i]);
    se += r * r;
    dd[i] = static_cast<T>(grad_scale * 2.0 * lambda * r / n);
  }
  model.backward(cache, dd);
  return lambda * se / n;
}

/// Adam on the EDM loss over `data`; parameters are updated in place. A
/// non-finite loss aborts with NumericalError.
template <class M>
TrainReport train_denoiser(M& model, const std::vector<TrainingPair>& data, const TrainOptions& opt) {
  if (data.empty()) throw ParameterError("train_denoiser: empty dataset");
  if (opt.batch_size < 1) throw ParameterError("train_denoiser: batch_size must be >= 1");
  TrainReport rep;
  if (opt.steps == 0) return rep;
  RngStream rng(opt.seed, 0x7a1);
  nn::Adam<float> adam(opt.lr);
  auto params = model.params();
  for (std::size_t step = 0; step < opt.steps; ++step) {
    model.zero_grad();
    double loss = 0.0;
    for (std::size_t b = 0; b < opt.batch_size; ++b) {
      const auto& ex = data[static_cast<std::size_t>(rng.next_u64() % data.size())];
      const double sigma = sample_log_normal_sigma(rng, opt.p_mean, opt.p_std, opt.sigma_min, opt.sigma_max);
      const Tensor eps = gaussian_noise(rng, ex.hr.dims());
      const double l = edm_loss_backward(model, ex.hr, sigma, eps, &ex.cond, 1.0 / static_cast<double>(opt.batch_size));
      if (!std::isfinite(l))
        throw NumericalError("train_denoiser: non-finite loss at step " + std::to_string(step) +
                             " (sigma=" + std::to_string(sigma) + ")");
      loss += l;
    }
    adam.step(params);
    rep.loss.push_back(loss / static_cast<double>(opt.batch_size));
    if (opt.on_step) opt.on_step(step, rep.loss.back());
  }
  return rep;
}

}  // namespace bdl
