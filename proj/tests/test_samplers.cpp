#include <gtest/gtest.h>

#include "bdl/experiment.hpp"
#include "bdl/toy2d.hpp"

using namespace bdl;

namespace {

// Uniform sigma grid from s0 down to s_end (no trailing zero).
EdmSchedule linear_schedule(double s0, double s_end, std::size_t n) {
  EdmSchedule s;
  for (std::size_t i = 0; i <= n; ++i) s.sigmas.push_back(s0 + (s_end - s0) * static_cast<double>(i) / static_cast<double>(n));
  return s;
}

// Global error of the PF-ODE for a unit Gaussian prior from sigma 1 to 0.1.
double ode_error(std::size_t n, bool second_order) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  Tensor x({4});
  const float starts[4] = {2.0f, -1.0f, 0.5f, 1.5f};
  for (std::size_t i = 0; i < 4; ++i) x[i] = starts[i];
  RngStream rng(0, 0);
  HeunOptions opt;
  opt.second_order = second_order;
  const Tensor out = edm_heun_sample(x, linear_schedule(1.0, 0.1, n), prior, nullptr, rng, opt);
  const double k = std::sqrt((1.0 + 0.01) / 2.0);
  double err = 0.0;
  for (std::size_t i = 0; i < 4; ++i) err = std::max(err, std::abs(out[i] - starts[i] * k));
  return err;
}

double loglog_slope(bool second_order) {
  // least-squares slope of log(err) against log(n)
  const std::vector<std::size_t> ns = {4, 8, 16, 32};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t n : ns) {
    const double lx = std::log(static_cast<double>(n)), ly = std::log(ode_error(n, second_order));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double m = static_cast<double>(ns.size());
  return -(m * sxy - sx * sy) / (m * sxx - sx * sx);
}

ExperimentConfig small_toy_config() {
  ExperimentConfig cfg;
  cfg.n_train = 1;
  cfg.n_test = 3;
  return cfg;
}

}  // namespace

TEST(Ddpm, OneStepOnPointMassReturnsTheAtom) {
  const Tensor atom = Tensor({2, 3}, std::vector<float>{0.1f, -0.4f, 0.7f, 1.2f, 0.0f, -2.0f});
  const GaussianPriorOracle point(atom, 0.0);
  const auto sched = make_ddpm(100, 1e-4, 0.02);
  RngStream rng(1, 1);
  const Tensor x1 = ddpm_skip_noise(atom, 1, sched, rng);
  const Tensor out = ddpm_reverse(x1, 1, sched, point, nullptr, rng);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], atom[i], 1e-5);
}

TEST(Ddpm, FullChainReproducesUnitGaussianCovariance) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  const auto sched = make_ddpm(100, 1e-4, 0.02);
  RngStream rng(2, 2);
  const std::size_t n = 20000;
  const Tensor xt = gaussian_noise(rng, {n, 2});
  const Tensor out = ddpm_reverse(xt, 100, sched, prior, nullptr, rng);
  double m0 = 0, m1 = 0, c00 = 0, c11 = 0, c01 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m0 += out[2 * i];
    m1 += out[2 * i + 1];
  }
  m0 /= n;
  m1 /= n;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = out[2 * i] - m0, b = out[2 * i + 1] - m1;
    c00 += a * a;
    c11 += b * b;
    c01 += a * b;
  }
  EXPECT_NEAR(c00 / n, 1.0, 0.05);
  EXPECT_NEAR(c11 / n, 1.0, 0.05);
  EXPECT_NEAR(c01 / n, 0.0, 0.05);
}

TEST(Ddpm, NoNoiseAndVanishingBetaIsIdentity) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  RngStream rng(3, 3);
  const Tensor x = gaussian_noise(rng, {16});
  DdpmOptions opt;
  opt.inject_noise = false;
  const auto zero = DdpmSchedule::from_betas(std::vector<double>(5, 0.0));
  EXPECT_EQ(ddpm_reverse(x, 5, zero, prior, nullptr, rng, opt), x);
  const auto tiny = DdpmSchedule::from_betas(std::vector<double>(5, 1e-12));
  const Tensor out = ddpm_reverse(x, 5, tiny, prior, nullptr, rng, opt);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[i], x[i], 1e-5);
}

TEST(Ddpm, RejectsTauOutOfRange) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  const auto sched = make_ddpm(10, 1e-4, 0.02);
  RngStream rng(4, 4);
  EXPECT_THROW(ddpm_reverse(Tensor({2}), 0, sched, prior, nullptr, rng), ParameterError);
  EXPECT_THROW(ddpm_reverse(Tensor({2}), 11, sched, prior, nullptr, rng), ParameterError);
}

TEST(Heun, SingleStepReturnsTheDenoiser) {
  const auto prior = GaussianPriorOracle::scalar(0.3, 0.5);
  RngStream rng(5, 5);
  const Tensor x = gaussian_noise(rng, {32}) * 2.0f;
  const Tensor out = edm_heun_sample(x, make_edm(1, 2.0, 0.002, 7.0), prior, nullptr, rng);
  const Tensor d = prior.evaluate(x, 2.0, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[i], d[i], 1e-6);
}

TEST(Heun, ClosedFormGaussianEndpoint) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  RngStream rng(6, 6);
  const Tensor out = edm_heun_sample(Tensor({1}, 2.0f), make_edm(256, 1.0, 0.002, 7.0), prior, nullptr, rng);
  EXPECT_NEAR(out[0], 2.0 / std::sqrt(2.0), 1e-3);
}

TEST(Heun, SecondOrderConvergence) {
  EXPECT_NEAR(loglog_slope(true), 2.0, 0.3);
  EXPECT_NEAR(loglog_slope(false), 1.0, 0.3);
  EXPECT_LT(ode_error(32, true), ode_error(32, false));
}

TEST(Heun, RecoversTwoComponentMixture) {
  const GmmOracle g = two_component_gmm();
  RngStream rng(7, 7);
  const std::size_t n = 20000;
  const Tensor x = gaussian_noise(rng, {n, 2}) * 80.0f;
  const Tensor out = edm_heun_sample(x, make_edm(40, 80.0, 0.002, 7.0), g, nullptr, rng);
  const auto lab = assign_components(g, out);
  for (std::size_t k = 0; k < 2; ++k) {
    double count = 0, mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (lab[i] == k) {
        ++count;
        mx += out[2 * i];
        my += out[2 * i + 1];
      }
    EXPECT_NEAR(count / n, g.components()[k].weight, 0.03) << k;
    EXPECT_NEAR(mx / count, g.components()[k].mean[0], 0.05) << k;
    EXPECT_NEAR(my / count, g.components()[k].mean[1], 0.05) << k;
  }
}

TEST(Heun, ChurnAddsNoiseButKeepsCallCount) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  const Tensor x({64}, 0.5f);
  RngStream a(8, 8), b(8, 8);
  HeunOptions opt;
  opt.churn = 5.0;
  SamplerTrace ta, tb;
  const Tensor plain = edm_heun_sample(x, make_edm(10, 1.0, 0.002, 7.0), prior, nullptr, a, {}, &ta);
  const Tensor churned = edm_heun_sample(x, make_edm(10, 1.0, 0.002, 7.0), prior, nullptr, b, opt, &tb);
  EXPECT_NE(plain, churned);
  EXPECT_EQ(ta.total_calls(), 19u);
  EXPECT_EQ(tb.total_calls(), 19u);
  opt.churn = -1.0;
  EXPECT_THROW(edm_heun_sample(x, make_edm(10, 1.0, 0.002, 7.0), prior, nullptr, b, opt), ParameterError);
}

TEST(Trace, CallCountsMatchSamplerFormulas) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  const Tensor x({8}, 0.2f);
  RngStream rng(9, 9);
  for (std::size_t n : {1u, 2u, 5u, 40u}) {
    SamplerTrace t;
    edm_heun_sample(x, make_skip_edm(n, 0.5), prior, nullptr, rng, {}, &t);
    EXPECT_EQ(t.total_calls(), 2 * n - 1) << n;
    EXPECT_EQ(t.steps.size(), n);
  }
  const auto sched = make_ddpm(100, 1e-4, 0.02);
  for (std::size_t tau : {1u, 7u, 100u}) {
    SamplerTrace t;
    ddpm_reverse(x, tau, sched, prior, nullptr, rng, {}, &t);
    EXPECT_EQ(t.total_calls(), tau) << tau;
  }
  for (std::size_t tcm : {1u, 2u, 3u, 11u}) {
    SamplerTrace t;
    cm_sample(x, prior, cm_sigma_sequence(0.03, tcm), nullptr, rng, &t);
    EXPECT_EQ(t.total_calls(), tcm) << tcm;
  }
}

TEST(Trace, CsvHeaderAndChecksums) {
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  RngStream a(10, 10), b(10, 10);
  SamplerTrace ta, tb;
  edm_heun_sample(Tensor({8}, 0.2f), make_skip_edm(4, 0.5), prior, nullptr, a, {}, &ta);
  edm_heun_sample(Tensor({8}, 0.2f), make_skip_edm(4, 0.5), prior, nullptr, b, {}, &tb);
  for (std::size_t i = 0; i < ta.steps.size(); ++i) EXPECT_EQ(ta.steps[i].checksum, tb.steps[i].checksum);
  EXPECT_EQ(ta.steps[0].sigma, 0.5);
  std::ostringstream os;
  ta.write_csv(os);
  EXPECT_EQ(os.str().rfind("step,sigma,calls,ms\n", 0), 0u);
}

TEST(Cm, PointMassIsAFixedPoint) {
  const Tensor atom = Tensor({4}, std::vector<float>{0.25f, -1.0f, 3.0f, 0.0f});
  const GaussianPriorOracle ideal(atom, 0.0);
  for (std::size_t tcm : {1u, 2u, 3u}) {
    RngStream rng(11, tcm);
    const Tensor out = cm_sample(Tensor({4}, 0.5f), ideal, cm_sigma_sequence(0.03, tcm), nullptr, rng);
    EXPECT_EQ(out, atom);
  }
}

TEST(Cm, SigmaSequence) {
  EXPECT_EQ(cm_sigma_sequence(0.03, 1), (std::vector<double>{0.03}));
  const auto two = cm_sigma_sequence(0.03, 2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0], 0.03);
  EXPECT_NEAR(two[1], 0.01, 1e-15);
  const auto many = cm_sigma_sequence(0.2, 11);
  for (std::size_t k = 1; k < many.size(); ++k) EXPECT_LT(many[k], many[k - 1]);
  EXPECT_NEAR(many.back(), 0.2 / std::pow(3.0, 10), 1e-15);
  EXPECT_THROW(cm_sigma_sequence(0.03, 0), ParameterError);
  EXPECT_THROW(cm_sigma_sequence(0.0, 2), ParameterError);
  const auto prior = GaussianPriorOracle::scalar(0.0, 1.0);
  RngStream rng(12, 12);
  EXPECT_THROW(cm_sample(Tensor({2}), prior, {}, nullptr, rng), ParameterError);
  EXPECT_THROW(cm_sample(Tensor({2}), prior, {0.01, 0.03}, nullptr, rng), ParameterError);
}

TEST(Cm, ExtraRefinementDoesNotDegradeToyStudent) {
  const GmmOracle g = two_component_gmm();
  Toy2dConfig cfg;
  cfg.sigma_skip = 0.03;
  cfg.init_noise = 0.03;
  cfg.iters = 2000;
  const ToyStudent s = distill_toy_student(g, cfg, InitMode::from_init_sr);
  const ModelDenoiser<ToyStudent> f(s);
  double w1 = 0.0, w2 = 0.0;
  for (std::uint64_t b = 0; b < 4; ++b) {
    RngStream rng(500 + b, 3);
    const Toy2dData data = make_toy2d(g, cfg, 512, rng);
    const Tensor ref = toy_teacher_samples(g, cfg, data.init, rng);
    RngStream r1 = rng.substream(1), r2 = rng.substream(1);
    w1 += wasserstein2_2d(cm_sample(data.init, f, {0.03}, nullptr, r1), ref).distance;
    w2 += wasserstein2_2d(cm_sample(data.init, f, {0.03, 0.01}, nullptr, r2), ref).distance;
  }
  EXPECT_LE(w2, 1.2 * w1);
}

TEST(Pipeline, ZeroSigmaReturnsTheInitialEstimate) {
  const auto cfg_data = small_toy_config();
  const auto toy = make_image_toy(cfg_data);
  const TinyDenoiser<float> net({}, 1);
  const ModelDenoiser<TinyDenoiser<float>> d(net);
  ExperimentConfig cfg = cfg_data;
  cfg.sigma_max = 0.0;
  const Tensor out = e_bsrd_pipeline(toy.test.bursts[0], cfg, {&d, &d});
  EXPECT_EQ(out, toy.test.pairs[0].init);
}

TEST(Pipeline, OneStepStudentMakesOneCall) {
  const auto toy = make_image_toy(small_toy_config());
  const TinyDenoiser<float> net({}, 1);
  const ModelDenoiser<TinyDenoiser<float>> d(net);
  ExperimentConfig cfg = small_toy_config();
  cfg.sampler = "cm";
  SamplerTrace t;
  const Tensor out = e_bsrd_pipeline(toy.test.bursts[0], cfg, {&d, &d}, 0, &t);
  EXPECT_EQ(t.total_calls(), 1u);
  EXPECT_EQ(out.dims(), (Dims{3, 32, 32}));
  for (float v : out.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Pipeline, BitIdenticalAcrossRuns) {
  const auto toy = make_image_toy(small_toy_config());
  const TinyDenoiser<float> net({}, 1);
  const ModelDenoiser<TinyDenoiser<float>> d(net);
  for (const char* sampler : {"edm", "ddpm", "cm"}) {
    ExperimentConfig cfg = small_toy_config();
    cfg.sampler = sampler;
    cfg.tau = 3;
    cfg.t_cm = 2;
    EXPECT_EQ(e_bsrd_pipeline(toy.test.bursts[1], cfg, {&d, &d}, 5),
              e_bsrd_pipeline(toy.test.bursts[1], cfg, {&d, &d}, 5))
        << sampler;
  }
}

TEST(Pipeline, MissingModelsAndUnknownSampler) {
  const auto toy = make_image_toy(small_toy_config());
  ExperimentConfig cfg = small_toy_config();
  EXPECT_THROW(e_bsrd_pipeline(toy.test.bursts[0], cfg, {}), ConfigError);
  cfg.sampler = "cm";
  EXPECT_THROW(e_bsrd_pipeline(toy.test.bursts[0], cfg, {}), ConfigError);
  cfg.sampler = "ddim";
  const auto prior = GaussianPriorOracle::scalar(0.5, 0.05);
  EXPECT_THROW(e_bsrd_pipeline(toy.test.bursts[0], cfg, {&prior, &prior}), ConfigError);
}

TEST(Pipeline, LargeSigmaWashesOutTheInit) {
  const auto toy = make_image_toy(small_toy_config());
  // pixelwise Gaussian prior stands in for a trained teacher
  const auto prior = GaussianPriorOracle::scalar(0.5, 0.05);
  ExperimentConfig cfg = small_toy_config();
  cfg.sigma_max = 80.0;
  EXPECT_LT(std::abs(init_output_correlation(toy.test.pairs, cfg, {&prior, nullptr}, 0.1)), 0.1);
  cfg.sigma_max = 0.005;
  EXPECT_GT(init_output_correlation(toy.test.pairs, cfg, {&prior, nullptr}, 0.1), 0.99);
}
