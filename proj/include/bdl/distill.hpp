#pragma once

// Consistency distillation of a one-step student from an EDM teacher, with the
// training noise centred either on the initial SR estimate or on clean data.

#include <functional>

#include "bdl/samplers.hpp"
#include "bdl/train.hpp"

namespace bdl {

enum class InitMode { from_init_sr, from_noise };
enum class DistillLoss { l2, pseudo_huber };

inline std::string to_string(InitMode m) { return m == InitMode::from_init_sr ? "init-sr" : "noise"; }

inline InitMode parse_init_mode(const std::string& s) {
  if (s == "init-sr" || s == "from_init_sr") return InitMode::from_init_sr;
  if (s == "noise" || s == "from_noise") return InitMode::from_noise;
  throw ConfigError("unknown init mode '" + s + "' (expected init-sr or noise)");
}

struct DistillConfig {
  EdmSchedule ladder;  // teacher levels, descending, trailing 0
  double ema_decay = 0.95;
  std::size_t n_iters = 1000;
  DistillLoss loss = DistillLoss::pseudo_huber;
  double huber_c = 0.03;
  InitMode init_mode = InitMode::from_init_sr;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (ladder.sigmas.size() < 3) throw ParameterError("distill: ladder needs at least two positive levels");
    if (!(ema_decay >= 0.9 && ema_decay <= 0.99999)) throw ParameterError("distill: ema_decay must lie in [0.9, 0.99999]");
    if (!(huber_c > 0.0)) throw ParameterError("distill: huber_c must be > 0");
  }
};

/// A minibatch for one distillation step. For images x0/init are [3,H,W];
/// for point clouds they are [N,d] and cond is null.
struct DistillBatch {
  Tensor x0;
  Tensor init;
  const ConditioningFeatures* cond = nullptr;
};
using DistillSource = std::function<DistillBatch(RngStream&)>;

inline DistillSource pair_source(const std::vector<TrainingPair>& data) {
  if (data.empty()) throw ParameterError("distill: empty dataset");
  return [&data](RngStream& rng) {
    const auto& ex = data[static_cast<std::size_t>(rng.next_u64() % data.size())];
    return DistillBatch{ex.hr, ex.init, &ex.cond};
  };
}

/// Random rows of [N,d] pools (clean points and their initial estimates).
inline DistillSource point_source(const Tensor& x0, const Tensor& init, std::size_t batch) {
  if (x0.rank() != 2 || !x0.same_shape(init)) throw ShapeError("point_source: expected matching [N,d] pools");
  return [&x0, &init, batch](RngStream& rng) {
    const std::size_t n = x0.dim(0), d = x0.dim(1);
    DistillBatch b{Tensor({batch, d}), Tensor({batch, d}), nullptr};
    for (std::size_t r = 0; r < batch; ++r) {
      const std::size_t k = static_cast<std::size_t>(rng.next_u64() % n);
      for (std::size_t j = 0; j < d; ++j) {
        b.x0[r * d + j] = x0[k * d + j];
        b.init[r * d + j] = init[k * d + j];
      }
    }
    return b;
  };
}

struct DistillReport {
  std::vector<double> loss;
  std::vector<double> update_norm;  // ||theta_t - theta_{t-1}||
  std::vector<double> ema_gap;      // ||theta_t - theta_ema_t||
  std::vector<double> ema_bound;    // b_t = mu (b_{t-1} + update_norm_t)
};

namespace detail {

inline double flat_distance(const std::vector<nn::Param<float>*>& a, const std::vector<nn::Param<float>*>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k]->value.size(); ++i) {
      const double d = static_cast<double>(a[k]->value[i]) - b[k]->value[i];
      s += d * d;
    }
  return std::sqrt(s);
}

}  // namespace detail

/// Consistency distillation. Each iteration picks adjacent ladder levels
/// sigma_hi > sigma_lo, noises the base (initial SR estimate or clean data) to
/// sigma_hi, moves it to sigma_lo with one teacher Heun step, and pulls the
/// online student at (x_hi, sigma_hi) towards the EMA target at (x_lo, sigma_lo).
template <class M>
DistillReport consistency_distill(const DenoiserInterface& teacher, M& student, const DistillSource& source,
                                  const DistillConfig& cfg) {
  cfg.validate();
  DistillReport rep;
  if (cfg.n_iters == 0) return rep;

  M target = student;
  auto params = student.params();
  auto tparams = target.params();
  std::vector<Tensor> before(params.size());
  nn::Adam<float> adam(cfg.lr);
  RngStream rng(cfg.seed, 0xd157);
  const std::size_t levels = cfg.ladder.sigmas.size() - 1;  // positive entries
  double bound = 0.0;

  for (std::size_t it = 0; it < cfg.n_iters; ++it) {
    const DistillBatch batch = source(rng);
    const std::size_t i = static_cast<std::size_t>(rng.next_u64() % (levels - 1));
    const double s_hi = cfg.ladder.sigmas[i], s_lo = cfg.ladder.sigmas[i + 1];

    const Tensor& base = cfg.init_mode == InitMode::from_init_sr ? batch.init : batch.x0;
    Tensor x_hi = base;
    x_hi.axpy(static_cast<float>(s_hi), gaussian_noise(rng, base.dims()));

    // one teacher Heun step from s_hi to s_lo
    const Tensor d1 = teacher.evaluate(x_hi, s_hi, batch.cond);
    Tensor slope = (x_hi - d1) * static_cast<float>(1.0 / s_hi);
    Tensor x_eu = x_hi;
    x_eu.axpy(static_cast<float>(s_lo - s_hi), slope);
    const Tensor d2 = teacher.evaluate(x_eu, s_lo, batch.cond);
    Tensor slope2 = (x_eu - d2) * static_cast<float>(1.0 / s_lo);
    Tensor x_lo = x_hi;
    x_lo.axpy(static_cast<float>(0.5 * (s_lo - s_hi)), slope);
    x_lo.axpy(static_cast<float>(0.5 * (s_lo - s_hi)), slope2);

    const Tensor tgt = target.predict(x_lo, s_lo, batch.cond);

    student.zero_grad();
    typename M::Cache cache;
    const Tensor pred = student.forward(x_hi, s_hi, batch.cond, cache);
    const double n = static_cast<double>(pred.size());
    Tensor grad = pred;
    double loss = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double r = static_cast<double>(pred[k]) - tgt[k];
      if (cfg.loss == DistillLoss::l2) {
        loss += r * r;
        grad[k] = static_cast<float>(2.0 * r / n);
      } else {
        const double q = std::sqrt(r * r + cfg.huber_c * cfg.huber_c);
        loss += q - cfg.huber_c;
        grad[k] = static_cast<float>(r / q / n);
      }
    }
    loss /= n;
    if (!std::isfinite(loss))
      throw NumericalError("consistency_distill: non-finite loss at iteration " + std::to_string(it));
    student.backward(cache, grad);

    for (std::size_t k = 0; k < params.size(); ++k) before[k] = params[k]->value;
    adam.step(params);
    double upd = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t j = 0; j < before[k].size(); ++j) {
        const double d = static_cast<double>(params[k]->value[j]) - before[k][j];
        upd += d * d;
      }
    upd = std::sqrt(upd);

    const auto mu = static_cast<float>(cfg.ema_decay);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& tv = tparams[k]->value;
      const auto& sv = params[k]->value;
      for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = mu * tv[j] + (1.0f - mu) * sv[j];
    }
    bound = cfg.ema_decay * (bound + upd);

    rep.loss.push_back(loss);
    rep.update_norm.push_back(upd);
    rep.ema_gap.push_back(detail::flat_distance(params, tparams));
    rep.ema_bound.push_back(bound);
  }
  return rep;
}

}  // namespace bdl
