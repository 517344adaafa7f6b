#pragma once

// Two-dimensional mixture toy for the distillation ablation: clean points from
// a GMM, "initial estimates" x0 + init_noise * u, an analytic teacher, and
// MLP consistency students trained from the initial estimates or from noise.

#include "bdl/distill.hpp"
#include "bdl/metrics.hpp"

namespace bdl {

inline GmmOracle two_component_gmm() {
  return GmmOracle({{0.3, {-1.0, -0.5}, 0.2}, {0.7, {1.0, 0.5}, 0.2}});
}

/// n draws from the mixture as [n, d].
inline Tensor sample_gmm(const GmmOracle& g, std::size_t n, RngStream& rng) {
  const std::size_t d = g.dim();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform(), acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < g.components().size(); ++k) {
      acc += g.components()[k].weight;
      if (u < acc) break;
    }
    const auto& c = g.components()[k];
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(c.mean[j] + c.stddev * rng.normal());
  }
  return out;
}

/// Index of the nearest component mean for each point.
inline std::vector<std::size_t> assign_components(const GmmOracle& g, const Tensor& pts) {
  const std::size_t d = g.dim(), n = pts.dim(0);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < g.components().size(); ++k) {
      double r = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = pts[i * d + j] - g.components()[k].mean[j];
        r += e * e;
      }
      if (r < best) {
        best = r;
        out[i] = k;
      }
    }
  }
  return out;
}

struct Toy2dConfig {
  double init_noise = 0.1;   // spread of the initial estimate around the clean point
  double sigma_skip = 0.4;   // skip-start level of the teacher and init-sr student
  std::size_t teacher_steps = 40;
  std::size_t pool = 8192;
  std::size_t levels = 18;
  std::size_t iters = 4000;
  std::size_t batch = 128;
  std::size_t hidden = 64;
  double lr = 2e-3;
  double ema_decay = 0.95;
  std::size_t eval_batches = 20;
  std::size_t eval_n = 512;
  std::size_t bootstrap = 2000;
  std::uint64_t seed = 11;
};

/// Pools of clean points and their initial estimates.
struct Toy2dData {
  Tensor x0;
  Tensor init;
};

inline Toy2dData make_toy2d(const GmmOracle& g, const Toy2dConfig& cfg, std::size_t n, RngStream& rng) {
  Toy2dData d{sample_gmm(g, n, rng), {}};
  d.init = d.x0;
  d.init.axpy(static_cast<float>(cfg.init_noise), gaussian_noise(rng, d.x0.dims()));
  return d;
}

/// Reference samples: teacher Heun from init + sigma_skip * eps.
inline Tensor toy_teacher_samples(const GmmOracle& g, const Toy2dConfig& cfg, const Tensor& init, RngStream& rng) {
  const auto sched = make_skip_edm(cfg.teacher_steps, cfg.sigma_skip);
  return edm_heun_sample(edm_skip_noise(init, cfg.sigma_skip, rng), sched, g, nullptr, rng);
}

using ToyStudent = ToyMlpDenoiser<float>;

inline ToyStudent distill_toy_student(const GmmOracle& g, const Toy2dConfig& cfg, InitMode mode,
                                      DistillReport* report = nullptr) {
  RngStream rng(cfg.seed, 0x70d0);
  const Toy2dData pool = make_toy2d(g, cfg, cfg.pool, rng);
  ToyStudent student({g.dim(), cfg.hidden, 1.0}, cfg.seed);
  DistillConfig dc;
  dc.ladder = mode == InitMode::from_init_sr ? make_skip_edm(cfg.levels, cfg.sigma_skip) : make_edm(cfg.levels, 80.0, 0.002, 7.0);
  dc.ema_decay = cfg.ema_decay;
  dc.n_iters = cfg.iters;
  dc.loss = DistillLoss::l2;
  dc.init_mode = mode;
  dc.lr = cfg.lr;
  dc.seed = cfg.seed;
  auto rep = consistency_distill(g, student, point_source(pool.x0, pool.init, cfg.batch), dc);
  if (report) *report = std::move(rep);
  return student;
}

/// One-step student samples for a batch of fresh initial estimates.
inline Tensor toy_student_samples(const ToyStudent& s, InitMode mode, const Toy2dConfig& cfg, const Tensor& init,
                                  RngStream& rng) {
  const ModelDenoiser<ToyStudent> f(s);
  if (mode == InitMode::from_init_sr) return cm_sample(init, f, {cfg.sigma_skip}, nullptr, rng);
  const Tensor zero(init.dims());
  return cm_sample(zero, f, {80.0}, nullptr, rng);
}

struct AblationReport {
  std::vector<double> w2_a, w2_b;  // per evaluation batch
  double mean_a = 0.0, mean_b = 0.0;
  double diff_mean = 0.0;          // mean(w2_b - w2_a)
  double ci_low = 0.0, ci_high = 0.0;  // 95% paired bootstrap interval of diff_mean

  bool a_better() const { return ci_low > 0.0; }
};

/// Paired percentile bootstrap of the mean difference b - a.
inline std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& diff, std::size_t resamples,
                                                   std::uint64_t seed, double level = 0.95) {
  if (diff.empty()) throw ParameterError("bootstrap: empty sample");
  RngStream rng(seed, 0xb007);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) s += diff[rng.next_u64() % diff.size()];
    m = s / static_cast<double>(diff.size());
  }
  std::sort(means.begin(), means.end());
  const double a = 0.5 * (1.0 - level);
  const auto lo = static_cast<std::size_t>(std::floor(a * static_cast<double>(resamples - 1)));
  const auto hi = static_cast<std::size_t>(std::ceil((1.0 - a) * static_cast<double>(resamples - 1)));
  return {means[lo], means[hi]};
}

/// Distils one student per arm with identical budgets and seeds, then compares
/// W2 to teacher samples over `eval_batches` independent batches of held-out
/// initial estimates.
inline AblationReport distill_ablation(const GmmOracle& g, const Toy2dConfig& cfg,
                                       InitMode arm_a = InitMode::from_init_sr, InitMode arm_b = InitMode::from_noise) {
  const ToyStudent sa = distill_toy_student(g, cfg, arm_a);
  const ToyStudent sb = arm_b == arm_a ? sa : distill_toy_student(g, cfg, arm_b);
  AblationReport rep;
  std::vector<double> diff;
  for (std::size_t k = 0; k < cfg.eval_batches; ++k) {
    RngStream rng(cfg.seed + 1000 + k, 0xe7a1);
    // held-out initial estimates shared by the teacher and both students; noise is independent
    const Toy2dData eval_data = make_toy2d(g, cfg, cfg.eval_n, rng);
    const Tensor ref = toy_teacher_samples(g, cfg, eval_data.init, rng);
    RngStream ra = rng.substream(1), rb = rng.substream(1);
    const Tensor a = toy_student_samples(sa, arm_a, cfg, eval_data.init, ra);
    const Tensor b = toy_student_samples(sb, arm_b, cfg, eval_data.init, rb);
    rep.w2_a.push_back(wasserstein2_2d(a, ref).distance);
    rep.w2_b.push_back(wasserstein2_2d(b, ref).distance);
    diff.push_back(rep.w2_b.back() - rep.w2_a.back());
  }
  for (std::size_t k = 0; k < diff.size(); ++k) {
    rep.mean_a += rep.w2_a[k];
    rep.mean_b += rep.w2_b[k];
    rep.diff_mean += diff[k];
  }
  const auto n = static_cast<double>(diff.size());
  rep.mean_a /= n;
  rep.mean_b /= n;
  rep.diff_mean /= n;
  std::tie(rep.ci_low, rep.ci_high) = bootstrap_mean_ci(diff, cfg.bootstrap, cfg.seed);
  return rep;
}

/// W2 between tau-step Heun samples started from pure noise (sigma 80) and
/// fresh mixture draws; the same noise and reference set serve every tau.
inline std::vector<double> toy_tau_sweep(const GmmOracle& g, const std::vector<std::size_t>& taus, std::size_t n,
                                         std::uint64_t seed) {
  RngStream rng(seed, 0x7a0);
  const Tensor ref = sample_gmm(g, n, rng);
  const Tensor start = gaussian_noise(rng, {n, g.dim()}) * 80.0f;
  std::vector<double> out;
  for (std::size_t tau : taus) {
    RngStream r = rng.substream(tau);
    out.push_back(wasserstein2_2d(edm_heun_sample(start, make_edm(tau, 80.0, 0.002, 7.0), g, nullptr, r), ref).distance);
  }
  return out;
}

}  // namespace bdl
