#pragma once

// Image-toy experiments: dataset synthesis, the full E-BSRD pipeline, sweeps
// over sigma_max / tau / T_CM, and runtime benchmarking.

#include <chrono>
#include <map>

#include "bdl/config.hpp"
#include "bdl/distill.hpp"
#include "bdl/metrics.hpp"

namespace bdl {

inline DegradationParams degradation_from(const ExperimentConfig& cfg) {
  DegradationParams p;
  p.max_translation = cfg.max_translation;
  p.max_rotation = cfg.max_rotation;
  p.scale_factor = static_cast<int>(cfg.scale_factor);
  p.noise_sigma = cfg.noise_sigma;
  p.burst_size = cfg.burst_size;
  p.seed = cfg.data_seed;
  return p;
}

/// Deterministic initial SR estimate and burst features for one stack.
struct PreparedBurst {
  Tensor init;
  ConditioningFeatures cond;
};

inline PreparedBurst prepare_burst(const BurstStack& stack, std::size_t scale_factor) {
  const auto align = stack.size() >= 2 ? estimate_shifts(stack) : identity_alignment(stack.size());
  const int sf = static_cast<int>(scale_factor);
  return {fuse_and_upsample(stack, align, sf), encode_burst(stack, align, sf)};
}

struct ToySplit {
  std::vector<Tensor> hr;
  std::vector<BurstStack> bursts;
  std::vector<TrainingPair> pairs;
};

struct ImageToy {
  ToySplit train, test;
};

namespace detail {

inline ToySplit make_split(const ExperimentConfig& cfg, std::size_t n, std::uint64_t stream) {
  const auto p = degradation_from(cfg);
  const RngStream root(cfg.data_seed, stream);
  ToySplit s;
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng = root.substream(i);
    Tensor hr = procedural_scene(rng, cfg.hr_size);
    BurstStack stack = synthesize_burst(hr, p, rng);
    auto prep = prepare_burst(stack, cfg.scale_factor);
    s.pairs.push_back({hr, std::move(prep.cond), std::move(prep.init)});
    s.hr.push_back(std::move(hr));
    s.bursts.push_back(std::move(stack));
  }
  return s;
}

}  // namespace detail

/// Train/test scenes with their bursts, generated from cfg.data_seed.
inline ImageToy make_image_toy(const ExperimentConfig& cfg) {
  return {detail::make_split(cfg, cfg.n_train, 1), detail::make_split(cfg, cfg.n_test, 2)};
}

inline void save_split(const std::filesystem::path& root, const ToySplit& s) {
  for (std::size_t i = 0; i < s.hr.size(); ++i) save_sample(root, i, s.hr[i], s.bursts[i]);
}

/// Loads a split written by save_split and recomputes the derived inputs.
inline ToySplit load_split(const std::filesystem::path& root, std::size_t scale_factor) {
  const std::size_t n = count_samples(root);
  if (n == 0) throw ConfigError("no samples found under " + root.string() + " (run `simulate` first)");
  ToySplit s;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor hr = load_hr(root, i);
    BurstStack stack = load_burst(root, i);
    auto prep = prepare_burst(stack, scale_factor);
    s.pairs.push_back({hr, std::move(prep.cond), std::move(prep.init)});
    s.hr.push_back(std::move(hr));
    s.bursts.push_back(std::move(stack));
  }
  return s;
}

struct PipelineModels {
  const DenoiserInterface* teacher = nullptr;  // ddpm and edm samplers
  const DenoiserInterface* student = nullptr;  // cm sampler
};

/// Skip-noise the initial estimate and run the configured sampler; clamps to [0, 1].
inline Tensor run_sampler(const Tensor& init, const ConditioningFeatures& cond, const ExperimentConfig& cfg,
                          const PipelineModels& models, RngStream& rng, SamplerTrace* trace = nullptr) {
  Tensor out;
  if (cfg.sampler == "edm") {
    if (!models.teacher) throw ConfigError("edm sampler needs a teacher model");
    if (cfg.sigma_max == 0.0) return init;
    const auto sched = make_skip_edm(cfg.tau, cfg.sigma_max, cfg.sigma_min, cfg.rho);
    HeunOptions opt;
    opt.churn = cfg.churn;
    out = edm_heun_sample(edm_skip_noise(init, cfg.sigma_max, rng), sched, *models.teacher, &cond, rng, opt, trace);
  } else if (cfg.sampler == "ddpm") {
    if (!models.teacher) throw ConfigError("ddpm sampler needs a teacher model");
    const auto sched = make_ddpm(cfg.ddpm_steps, cfg.beta_start, cfg.beta_end);
    out = ddpm_reverse(ddpm_skip_noise(init, cfg.tau, sched, rng), cfg.tau, sched, *models.teacher, &cond, rng, {},
                       trace);
  } else if (cfg.sampler == "cm") {
    if (!models.student) throw ConfigError("cm sampler needs a student model");
    if (cfg.sigma_max == 0.0) return init;
    out = cm_sample(init, *models.student, cm_sigma_sequence(cfg.sigma_max, cfg.t_cm, cfg.rho), &cond, rng, trace);
  } else {
    throw ConfigError("unknown sampler '" + cfg.sampler + "'");
  }
  out.clamp(0.0f, 1.0f);
  return out;
}

inline RngStream image_rng(const ExperimentConfig& cfg, std::uint64_t image_id) {
  return RngStream(cfg.seed, 0x5a3e0000ULL + image_id);
}

/// estimate_shifts -> fuse_and_upsample -> encode_burst -> skip-noise -> sampler -> clamp.
inline Tensor e_bsrd_pipeline(const BurstStack& stack, const ExperimentConfig& cfg, const PipelineModels& models,
                              std::uint64_t image_id = 0, SamplerTrace* trace = nullptr) {
  const auto prep = prepare_burst(stack, cfg.scale_factor);
  RngStream rng = image_rng(cfg, image_id);
  return run_sampler(prep.init, prep.cond, cfg, models, rng, trace);
}

inline MetricReport score_images(const std::vector<Tensor>& outputs, const std::vector<Tensor>& hr) {
  MetricReport rep;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    rep.images.push_back({dataset_stem(i), psnr_or(outputs[i], hr[i]), ssim(outputs[i], hr[i])});
  return rep;
}

/// PSNR/SSIM of the initial estimates alone.
inline MetricReport score_baseline(const std::vector<TrainingPair>& pairs) {
  MetricReport rep;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    rep.images.push_back({dataset_stem(i), psnr_or(pairs[i].init, pairs[i].hr), ssim(pairs[i].init, pairs[i].hr)});
  return rep;
}

/// Runs the sampler over prepared pairs (image_id = index) and scores against HR.
inline MetricReport evaluate_pairs(const std::vector<TrainingPair>& pairs, const ExperimentConfig& cfg,
                                   const PipelineModels& models, std::vector<Tensor>* outputs = nullptr,
                                   double* calls_per_image = nullptr) {
  std::vector<Tensor> outs, hr;
  std::size_t calls = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    RngStream rng = image_rng(cfg, i);
    SamplerTrace trace;
    outs.push_back(run_sampler(pairs[i].init, pairs[i].cond, cfg, models, rng, &trace));
    calls += trace.total_calls();
    hr.push_back(pairs[i].hr);
  }
  if (calls_per_image) *calls_per_image = static_cast<double>(calls) / static_cast<double>(pairs.size());
  auto rep = score_images(outs, hr);
  if (outputs) *outputs = std::move(outs);
  return rep;
}

// ------------------------------------------------------------------ sweeps

enum class SweepAxis { sigma_max, tau, t_cm };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::sigma_max: return "sigma_max";
    case SweepAxis::tau: return "tau";
    case SweepAxis::t_cm: return "t_cm";
  }
  return {};
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "sigma_max" || s == "sigma-max") return SweepAxis::sigma_max;
  if (s == "tau") return SweepAxis::tau;
  if (s == "t_cm" || s == "tcm" || s == "t-cm") return SweepAxis::t_cm;
  throw ConfigError("unknown sweep axis '" + s + "' (expected sigma_max, tau or t_cm)");
}

/// Copy of cfg with the axis set to `value` (t_cm rows use the cm sampler).
inline ExperimentConfig with_axis(ExperimentConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::sigma_max:
      cfg.sigma_max = value;
      break;
    case SweepAxis::tau:
      if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("tau sweep values must be integers >= 1");
      cfg.tau = static_cast<std::size_t>(value);
      break;
    case SweepAxis::t_cm:
      if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("t_cm sweep values must be integers >= 1");
      cfg.t_cm = static_cast<std::size_t>(value);
      cfg.sampler = "cm";
      break;
  }
  return cfg;
}

struct SweepRow {
  double value = 0.0;
  std::string config_hash;
  MetricReport report;
  double calls_per_image = 0.0;
  std::vector<Tensor> outputs;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::sigma_max;
  std::string config_hash;
  std::vector<SweepRow> rows;

  void write_csv(std::ostream& os) const {
    os << "config_hash,row_hash,axis,value,mean_psnr_db,std_psnr_db,mean_ssim,std_ssim,calls_per_image\n";
    os.precision(10);
    for (const auto& r : rows)
      os << config_hash << ',' << r.config_hash << ',' << to_string(axis) << ',' << r.value << ','
         << r.report.mean_psnr() << ',' << r.report.std_psnr() << ',' << r.report.mean_ssim() << ','
         << r.report.std_ssim() << ',' << r.calls_per_image << '\n';
  }
};

/// One row per value, in the order given; every row uses the same seed.
inline SweepTable run_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                            const PipelineModels& models, const std::vector<TrainingPair>& pairs) {
  SweepTable table{axis, config_hash(cfg), {}};
  for (double v : values) {
    const ExperimentConfig row_cfg = with_axis(cfg, axis, v);
    SweepRow row;
    row.value = v;
    row.config_hash = config_hash(row_cfg);
    row.report = evaluate_pairs(pairs, row_cfg, models, &row.outputs, &row.calls_per_image);
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline const std::vector<double>& sweep_values(const ExperimentConfig& cfg, SweepAxis axis) {
  switch (axis) {
    case SweepAxis::sigma_max: return cfg.sweep_sigma_max;
    case SweepAxis::tau: return cfg.sweep_tau;
    case SweepAxis::t_cm: return cfg.sweep_t_cm;
  }
  return cfg.sweep_sigma_max;
}

// --------------------------------------------------------------- init sensitivity

/// Pearson correlation of two equally sized sample vectors.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: need two equal-length vectors");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

/// Smooth zero-mean perturbation (sum of low-frequency sinusoids), std about `amp`.
inline Tensor smooth_perturbation(const Dims& dims, double amp, RngStream& rng) {
  Tensor d(dims);
  const std::size_t c = dims[0], h = dims[1], w = dims[2];
  for (int k = 0; k < 3; ++k) {
    const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0), ph = rng.uniform(0.0, 6.283185307179586);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = rng.uniform(-1.0, 1.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          d.at(ch, y, x) += static_cast<float>(
              amp * g * std::sin(6.283185307179586 * (fx * x / static_cast<double>(w) + fy * y / static_cast<double>(h)) + ph));
    }
  }
  const double s = std::sqrt(d.squared_norm() / static_cast<double>(d.size()));
  if (s > 0.0) d *= static_cast<float>(amp / s);
  return d;
}

/// How much of a change to the initial estimate survives sampling, with the
/// burst features held fixed: corr(out(init + delta, seed b) - out(init, seed a), delta)
/// pooled over all images and pixels. Near 1 when the sampler preserves the
/// init; near 0 when the output forgets it.
inline double init_output_correlation(const std::vector<TrainingPair>& pairs, const ExperimentConfig& cfg,
                                      const PipelineModels& models, double amp = 0.05) {
  std::vector<double> diffs, deltas;
  RngStream prng(cfg.seed, 0xc0ffee);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor delta = smooth_perturbation(pairs[i].init.dims(), amp, prng);
    // keep the perturbed init inside [0, 1] so clamping does not bias the comparison
    Tensor base = pairs[i].init;
    for (auto& v : base.values()) v = 0.1f + 0.8f * v;
    RngStream ra = image_rng(cfg, 2 * i), rb = image_rng(cfg, 2 * i + 1);
    const Tensor out_a = run_sampler(base, pairs[i].cond, cfg, models, ra);
    const Tensor out_b = run_sampler(base + delta, pairs[i].cond, cfg, models, rb);
    for (std::size_t k = 0; k < delta.size(); ++k) {
      diffs.push_back(static_cast<double>(out_b[k]) - out_a[k]);
      deltas.push_back(delta[k]);
    }
  }
  return pearson(diffs, deltas);
}

// ------------------------------------------------------------------ benchmark

struct BenchResult {
  std::string id;
  std::string config_hash;
  double secs_per_image = 0.0;
  double calls_per_image = 0.0;
  std::size_t images = 0;
};

inline std::string bench_id(const ExperimentConfig& cfg) {
  std::ostringstream os;
  if (cfg.sampler == "cm")
    os << "cm_tcm" << cfg.t_cm;
  else
    os << cfg.sampler << "_tau" << cfg.tau;
  os << "_sigma" << cfg.sigma_max;
  return os.str();
}

/// Wall-clock per image of the whole pipeline. The first `bench_warmup`
/// images are discarded; bursts are cycled when there are fewer than needed.
inline std::vector<BenchResult> bench_runtime(const std::vector<ExperimentConfig>& cfgs, const PipelineModels& models,
                                              const std::vector<BurstStack>& bursts) {
  if (bursts.empty()) throw ParameterError("bench_runtime: no bursts");
  std::vector<BenchResult> out;
  for (const auto& cfg : cfgs) {
    BenchResult r{bench_id(cfg), config_hash(cfg), 0.0, 0.0, cfg.bench_images};
    if (cfg.bench_images < 1) throw ConfigError("bench_images must be >= 1");
    double secs = 0.0;
    std::size_t calls = 0;
    for (std::size_t k = 0; k < cfg.bench_warmup + cfg.bench_images; ++k) {
      const auto& stack = bursts[k % bursts.size()];
      SamplerTrace trace;
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor img = e_bsrd_pipeline(stack, cfg, models, k, &trace);
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (img.empty()) throw NumericalError("bench_runtime: empty output");
      if (k < cfg.bench_warmup) continue;
      secs += dt;
      calls += trace.total_calls();
    }
    r.secs_per_image = secs / static_cast<double>(cfg.bench_images);
    r.calls_per_image = static_cast<double>(calls) / static_cast<double>(cfg.bench_images);
    out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const BenchResult& a, const BenchResult& b) { return a.id < b.id; });
  return out;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rows) {
  os << "config_hash,id,secs_per_image,calls_per_image,images\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.config_hash << ',' << r.id << ',' << r.secs_per_image << ',' << r.calls_per_image << ',' << r.images << '\n';
}

// ------------------------------------------------------------------ training glue

inline TrainOptions train_options_from(const ExperimentConfig& cfg) {
  TrainOptions o;
  o.steps = cfg.train_steps;
  o.batch_size = cfg.batch_size;
  o.lr = cfg.lr;
  o.p_mean = cfg.p_mean;
  o.p_std = cfg.p_std;
  o.sigma_min = cfg.sigma_min_train;
  o.sigma_max = cfg.sigma_max_train;
  o.seed = cfg.seed;
  return o;
}

/// Distillation settings for the image student: ladder over the skip regime
/// [sigma_min', sigma_max] for init-sr, the full [sigma_min, 80] otherwise.
inline DistillConfig distill_config_from(const ExperimentConfig& cfg) {
  DistillConfig d;
  d.init_mode = parse_init_mode(cfg.init_mode);
  if (!(cfg.sigma_max > 0.0)) throw ConfigError("distillation needs sigma_max > 0");
  d.ladder = d.init_mode == InitMode::from_init_sr ? make_skip_edm(cfg.distill_levels, cfg.sigma_max, cfg.sigma_min, cfg.rho)
                                                   : make_edm(cfg.distill_levels, 80.0, cfg.sigma_min, cfg.rho);
  d.ema_decay = cfg.ema_decay;
  d.n_iters = cfg.distill_iters;
  d.loss = cfg.distill_loss == "l2" ? DistillLoss::l2 : DistillLoss::pseudo_huber;
  d.huber_c = cfg.huber_c;
  d.lr = cfg.distill_lr;
  d.seed = cfg.seed;
  return d;
}

}  // namespace bdl
