// End-to-end gate: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset (e.g. `acceptance 1 2 9`).

#include <cstdio>
#include <set>

#include "bdl/bdl.hpp"

using namespace bdl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Skip-noising moments on the T = 1000 linear schedule.
Outcome skip_noise_moments() {
  const auto sched = make_ddpm(1000, 1e-4, 0.02);
  RngStream scene_rng(1, 1);
  const Tensor x0 = box_downsample(procedural_scene(scene_rng, 32), 4);  // [3, 8, 8]
  const std::size_t draws = 100000, n = x0.size();
  bool ok = true;
  std::string detail;
  for (std::size_t tau : {10u, 100u, 500u}) {
    RngStream rng(2, tau);
    std::vector<double> sum(n, 0.0), sq(n, 0.0);
    for (std::size_t k = 0; k < draws; ++k) {
      const Tensor xt = ddpm_skip_noise(x0, tau, sched, rng);
      for (std::size_t i = 0; i < n; ++i) {
        sum[i] += xt[i];
        sq[i] += static_cast<double>(xt[i]) * xt[i];
      }
    }
    // pooled regression of the mean on x0, pooled variance
    double sxy = 0.0, sxx = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = sum[i] / draws;
      sxy += m * x0[i];
      sxx += static_cast<double>(x0[i]) * x0[i];
      var += sq[i] / draws - m * m;
    }
    const double slope = sxy / sxx, v = var / static_cast<double>(n);
    const double want_slope = std::sqrt(sched.alpha_bar(tau)), want_var = sched.one_minus_alpha_bar(tau);
    const double e_mean = std::abs(slope / want_slope - 1.0), e_var = std::abs(v / want_var - 1.0);
    ok = ok && e_mean < 0.02 && e_var < 0.02;
    detail += fmt("tau=%zu mean err %.2f%% var err %.2f%%; ", tau, 100 * e_mean, 100 * e_var);
  }
  return {ok, detail};
}

// 2. Heun is second order, Euler first order, on the Gaussian PF-ODE to sigma = 0.
double ode_slope(bool second_order) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  const std::vector<float> starts = {2.0f, -1.0f, 0.5f, 1.5f};
  const std::vector<std::size_t> ns = {8, 16, 32, 64};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t n : ns) {
    EdmSchedule sched;
    for (std::size_t i = 0; i <= n; ++i) sched.sigmas.push_back(1.0 - static_cast<double>(i) / static_cast<double>(n));
    HeunOptions opt;
    opt.second_order = second_order;
    RngStream rng(0, 0);
    const Tensor out = edm_heun_sample(Tensor({starts.size()}, starts), sched, prior, nullptr, rng, opt);
    double err = 0.0;
    for (std::size_t i = 0; i < starts.size(); ++i) err = std::max(err, std::abs(out[i] - starts[i] / std::sqrt(2.0)));
    const double lx = std::log(static_cast<double>(n)), ly = std::log(err);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double m = static_cast<double>(ns.size());
  return -(m * sxy - sx * sy) / (m * sxx - sx * sx);
}

Outcome heun_order() {
  const double heun = ode_slope(true), euler = ode_slope(false);
  return {std::abs(heun - 2.0) <= 0.3 && std::abs(euler - 1.0) <= 0.3,
          fmt("Heun slope %.3f, Euler slope %.3f", heun, euler)};
}

// 3. 40-step Heun from sigma 80 with the analytic mixture denoiser.
Outcome mixture_recovery() {
  const GmmOracle g = two_component_gmm();
  RngStream rng(7, 7);
  const std::size_t n = 20000;
  const Tensor out = edm_heun_sample(gaussian_noise(rng, {n, 2}) * 80.0f, make_edm(40, 80.0, 0.002, 7.0), g, nullptr, rng);
  const auto lab = assign_components(g, out);
  bool ok = true;
  std::string detail;
  for (std::size_t k = 0; k < 2; ++k) {
    double count = 0, mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (lab[i] == k) {
        ++count;
        mx += out[2 * i];
        my += out[2 * i + 1];
      }
    const auto& c = g.components()[k];
    const double w = count / n, dm = std::max(std::abs(mx / count - c.mean[0]), std::abs(my / count - c.mean[1]));
    ok = ok && std::abs(w - c.weight) <= 0.03 && dm <= 0.05;
    detail += fmt("component %zu weight %.4f (want %.2f) mean err %.4f; ", k, w, c.weight, dm);
  }
  return {ok, detail};
}

// 4. Init-centred distillation beats noise-centred distillation on the 2-D toy.
Outcome init_ablation() {
  const auto rep = distill_ablation(two_component_gmm(), Toy2dConfig{});
  return {rep.a_better(), fmt("W2 init-sr %.4f, noise %.4f, diff %.4f, 95%% CI [%.4f, %.4f]", rep.mean_a, rep.mean_b,
                              rep.diff_mean, rep.ci_low, rep.ci_high)};
}

// Shared image-toy models for criteria 5-7.
struct ImageModels {
  ExperimentConfig cfg;
  ImageToy toy;
  TinyDenoiser<float> teacher;
  TinyDenoiser<float> student;
  double train_secs = 0.0;
};

std::unique_ptr<ImageModels> build_image_models() {
  auto m = std::make_unique<ImageModels>();
  const auto t0 = Clock::now();
  m->toy = make_image_toy(m->cfg);
  m->teacher = TinyDenoiser<float>({}, m->cfg.seed);
  auto opt = train_options_from(m->cfg);
  opt.on_step = [](std::size_t step, double loss) {
    if ((step + 1) % 500 == 0) std::fprintf(stderr, "  teacher step %zu loss %.5f\n", step + 1, loss);
  };
  train_denoiser(m->teacher, m->toy.train.pairs, opt);
  m->student = m->cfg.warm_start ? m->teacher : TinyDenoiser<float>({}, m->cfg.seed + 1);
  const ModelDenoiser<TinyDenoiser<float>> d(m->teacher);
  const auto rep = consistency_distill(d, m->student, pair_source(m->toy.train.pairs), distill_config_from(m->cfg));
  std::fprintf(stderr, "  distillation final loss %.6f\n", rep.loss.empty() ? 0.0 : rep.loss.back());
  m->train_secs = seconds_since(t0);
  return m;
}

Outcome one_step_parity(ImageModels& m) {
  const auto t0 = Clock::now();
  const ModelDenoiser<TinyDenoiser<float>> t(m.teacher), s(m.student);
  const PipelineModels models{&t, &s};
  const auto& pairs = m.toy.test.pairs;
  ExperimentConfig edm = m.cfg;
  const double teacher = evaluate_pairs(pairs, edm, models).mean_psnr();
  double cm[4] = {};
  for (std::size_t k = 1; k <= 3; ++k) {
    ExperimentConfig c = m.cfg;
    c.sampler = "cm";
    c.t_cm = k;
    cm[k] = evaluate_pairs(pairs, c, models).mean_psnr();
  }
  const double base = score_baseline(pairs).mean_psnr();
  const double secs = m.train_secs + seconds_since(t0);
  const bool ok = std::abs(cm[1] - teacher) <= 1.5 && std::abs(cm[2] - cm[1]) < 0.3 && std::abs(cm[3] - cm[1]) < 0.3 &&
                  secs < 1800.0;
  return {ok, fmt("init %.3f dB, teacher tau=40 %.3f dB, student T_CM=1/2/3 %.3f/%.3f/%.3f dB, %.0f s incl. training",
                  base, teacher, cm[1], cm[2], cm[3], secs)};
}

Outcome sigma_trend(ImageModels& m) {
  const ModelDenoiser<TinyDenoiser<float>> t(m.teacher);
  const PipelineModels models{&t, nullptr};
  const std::vector<double> levels = {0.005, 0.03, 0.2, 80.0};
  const auto table = run_sweep(m.cfg, SweepAxis::sigma_max, levels, models, m.toy.test.pairs);
  std::string detail = "PSNR";
  int inversions = 0;
  bool ok = true;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const double p = table.rows[k].report.mean_psnr();
    detail += fmt(" %g:%.3f", levels[k], p);
    if (k) {
      const double rise = p - table.rows[k - 1].report.mean_psnr();
      if (rise > 0.0) {
        ++inversions;
        ok = ok && rise <= 0.1;
      }
    }
  }
  ok = ok && inversions <= 1;
  ExperimentConfig hi = m.cfg, lo = m.cfg;
  hi.sigma_max = 80.0;
  lo.sigma_max = 0.005;
  const double c_hi = init_output_correlation(m.toy.test.pairs, hi, models);
  const double c_lo = init_output_correlation(m.toy.test.pairs, lo, models);
  ok = ok && std::abs(c_hi) < 0.1 && c_lo > 0.99;
  detail += fmt("; corr(sigma=80) %.4f, corr(sigma=0.005) %.4f", c_hi, c_lo);
  return {ok, detail};
}

Outcome runtime_scaling(ImageModels& m) {
  const ModelDenoiser<TinyDenoiser<float>> t(m.teacher), s(m.student);
  ExperimentConfig ddpm = m.cfg, heun = m.cfg, cm = m.cfg;
  ddpm.sampler = "ddpm";
  ddpm.tau = 100;
  heun.tau = 40;
  cm.sampler = "cm";
  cm.t_cm = 1;
  const auto res = bench_runtime({ddpm, heun, cm}, {&t, &s}, m.toy.test.bursts);
  double t_ddpm = 0, t_heun = 0, t_cm = 0;
  for (const auto& r : res) {
    if (r.id.rfind("ddpm", 0) == 0) t_ddpm = r.secs_per_image;
    if (r.id.rfind("edm", 0) == 0) t_heun = r.secs_per_image;
    if (r.id.rfind("cm", 0) == 0) t_cm = r.secs_per_image;
  }
  const double speedup = t_ddpm / t_cm, ratio = t_heun / t_ddpm, calls = 79.0 / 100.0;
  const bool ok = t_ddpm > t_heun && t_heun > t_cm && speedup >= 20.0 && std::abs(ratio / calls - 1.0) <= 0.3;
  return {ok, fmt("secs/image DDPM tau=100 %.4f, Heun tau=40 %.4f, CM T_CM=1 %.4f; CM speedup %.1fx; Heun/DDPM %.3f "
                  "(call ratio %.2f)",
                  t_ddpm, t_heun, t_cm, speedup, ratio, calls)};
}

// 8. Hand-written backprop against central differences, 32 coordinates per layer type.
std::string layer_type(const std::string& name) {
  if (name.find("sft") != std::string::npos) return "sft";
  if (name.find("noise") != std::string::npos) return "noise-bias";
  if (name.find("proj") != std::string::npos) return "conv1x1";
  if (name.find("fc") != std::string::npos) return "linear";
  return "conv3x3";
}

template <class M, class Loss>
void check_gradients(M& m, const Loss& loss, RngStream& r, std::map<std::string, std::pair<int, double>>& worst) {
  std::map<std::string, std::vector<std::pair<nn::Param<double>*, std::size_t>>> by_type;
  for (auto* p : m.params()) by_type[layer_type(p->name)].push_back({p, 0});
  for (auto& [type, list] : by_type) {
    for (int j = 0; j < 32; ++j) {
      auto* p = list[static_cast<std::size_t>(r.next_u64() % list.size())].first;
      const std::size_t i = static_cast<std::size_t>(r.next_u64() % p->value.size());
      const double h = 1e-6, keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss();
      p->value[i] = keep - h;
      const double lm = loss();
      p->value[i] = keep;
      const double fd = (lp - lm) / (2 * h), an = p->grad[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
      auto& w = worst[type];
      ++w.first;
      w.second = std::max(w.second, rel);
    }
  }
}

Outcome gradient_check() {
  std::map<std::string, std::pair<int, double>> worst;
  RngStream r(8, 8);
  {
    TinyDenoiser<double> m({3, 8, 8, 16, 0.5}, 3);
    m.cond_scale = 0.7;
    for (auto* p : m.params())
      if (p->name.find("sft") != std::string::npos)
        for (auto& v : p->value.values()) v = 0.2 * r.normal();
    const auto x = gaussian_noise(r, {3, 8, 8}).cast<double>();
    const auto wts = gaussian_noise(r, {3, 8, 8}).cast<double>();
    BasicConditioning<double> cond;
    for (std::size_t k = 0; k < 3; ++k) cond.scales[k] = gaussian_noise(r, {kCondChannels, 8u >> k, 8u >> k}).cast<double>();
    const double sigma = 0.4;
    auto loss = [&] {
      const auto d = m.predict(x, sigma, &cond);
      double s = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) s += wts[i] * d[i];
      return s;
    };
    m.zero_grad();
    TinyDenoiser<double>::Cache c;
    m.forward(x, sigma, &cond, c);
    m.backward(c, wts);
    check_gradients(m, loss, r, worst);
  }
  {
    ToyMlpDenoiser<double> m({2, 16, 1.0}, 5);
    const auto x = gaussian_noise(r, {7, 2}).cast<double>();
    const auto wts = gaussian_noise(r, {7, 2}).cast<double>();
    auto loss = [&] {
      const auto d = m.predict(x, 0.8, nullptr);
      double s = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) s += wts[i] * d[i];
      return s;
    };
    m.zero_grad();
    ToyMlpDenoiser<double>::Cache c;
    m.forward(x, 0.8, nullptr, c);
    m.backward(c, wts);
    check_gradients(m, loss, r, worst);
  }
  bool ok = true;
  std::string detail;
  for (const auto& [type, w] : worst) {
    ok = ok && w.second < 1e-3 && w.first >= 32;
    detail += fmt("%s %d coords max rel err %.2e; ", type.c_str(), w.first, w.second);
  }
  return {ok, detail};
}

// 9. Metrics against direct re-implementations.
double psnr_reference(const Tensor& a, const Tensor& b) {
  long double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (static_cast<long double>(a[i]) - b[i]) * (static_cast<long double>(a[i]) - b[i]);
  return 10.0 * std::log10(1.0 / static_cast<double>(se / a.size()));
}

double ssim_reference(const Tensor& a, const Tensor& b) {
  double g[11][11], gs = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  double total = 0.0;
  for (std::size_t ch = 0; ch < a.dim(0); ++ch) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t y = 0; y + 11 <= a.dim(1); ++y)
      for (std::size_t x = 0; x + 11 <= a.dim(2); ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = g[i][j] / gs, p = a.at(ch, y + i, x + j), q = b.at(ch, y + i, x + j);
            mx += w * p;
            my += w * q;
            sxx += w * p * p;
            syy += w * q * q;
            sxy += w * p * q;
          }
        const double c1 = 1e-4, c2 = 9e-4;
        acc += (2 * mx * my + c1) * (2 * (sxy - mx * my) + c2) /
               ((mx * mx + my * my + c1) * (sxx - mx * mx + syy - my * my + c2));
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(a.dim(0));
}

Outcome metric_fidelity() {
  RngStream r(9, 9);
  double dp = 0.0, ds = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Tensor a = procedural_scene(r, 24);
    Tensor b = a;
    b.axpy(static_cast<float>(r.uniform(0.01, 0.2)), gaussian_noise(r, a.dims()));
    b.clamp(0.0f, 1.0f);
    dp = std::max(dp, std::abs(*psnr(a, b) - psnr_reference(a, b)));
    ds = std::max(ds, std::abs(ssim(a, b) - ssim_reference(a, b)));
  }
  const double six = *psnr(Tensor({3, 8, 8}, 0.25f), Tensor({3, 8, 8}, 0.75f));
  return {dp < 1e-6 && ds < 1e-4 && std::abs(six - 6.0206) < 1e-4,
          fmt("max |dPSNR| %.2e dB, max |dSSIM| %.2e, constant-diff PSNR %.5f dB", dp, ds, six)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int k) { return only.empty() || only.count(k); };

  struct Criterion {
    int id;
    const char* name;
    double limit_secs;  // 0: no separate limit
  };
  const Criterion list[] = {{1, "skip-noising statistics", 10},    {2, "second-order convergence", 5},
                            {3, "distribution recovery", 60},      {4, "initialization ablation", 600},
                            {5, "one-step parity", 0},             {6, "sigma_max monotonicity", 0},
                            {7, "runtime scaling", 0},             {8, "gradient correctness", 30},
                            {9, "metric fidelity", 0}};

  std::unique_ptr<ImageModels> models;
  int failed = 0;
  for (const auto& c : list) {
    if (!wanted(c.id)) continue;
    if (c.id >= 5 && c.id <= 7 && !models) {
      std::fprintf(stderr, "training image-toy teacher and student...\n");
      models = build_image_models();
    }
    const auto t0 = Clock::now();
    Outcome o;
    try {
      switch (c.id) {
        case 1: o = skip_noise_moments(); break;
        case 2: o = heun_order(); break;
        case 3: o = mixture_recovery(); break;
        case 4: o = init_ablation(); break;
        case 5: o = one_step_parity(*models); break;
        case 6: o = sigma_trend(*models); break;
        case 7: o = runtime_scaling(*models); break;
        case 8: o = gradient_check(); break;
        case 9: o = metric_fidelity(); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.limit_secs > 0 && secs >= c.limit_secs) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s limit]", c.limit_secs);
    }
    std::printf("criterion %d %s: %s (%.1f s) %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
