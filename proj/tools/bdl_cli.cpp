// bdl: dataset synthesis, training, distillation, sampling, sweeps and
// benchmarks for the burst SR diffusion toy. Outputs go to runs/<config-hash>/.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <thread>

#include "bdl/bdl.hpp"

using namespace bdl;
namespace fs = std::filesystem;

namespace {

using Model = TinyDenoiser<float>;

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  // flags that override config fields, keyed by field name
  std::map<std::string, std::string> flags;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig cfg;
  if (!o.config_file.empty()) {
    std::ifstream f(o.config_file);
    if (!f) throw ConfigError("cannot open config file " + o.config_file);
    parse_config(f, cfg);
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)), "cli");
  }
  apply_environment(cfg);
  for (const auto& [key, value] : o.flags) set_config_value(cfg, key, value, "cli");
  validate_config(cfg);
  return cfg;
}

fs::path run_dir(const ExperimentConfig& cfg, const std::string& sub) {
  const fs::path dir = fs::path(cfg.runs_dir) / config_hash(cfg) / sub;
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  return os;
}

fs::path split_dir(const ExperimentConfig& cfg, const char* split) { return fs::path(cfg.data_dir) / split; }

Model load_model(const std::string& dir, double cond_scale) {
  Model m;
  load_checkpoint(dir, m);
  m.cond_scale = static_cast<float>(cond_scale);
  return m;
}

/// Runs fn(i) for i in [0, n) on `jobs` threads; every index owns its RNG stream.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!err) err = std::current_exception();
        }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

void write_images(const fs::path& dir, const std::vector<Tensor>& images) {
  for (std::size_t i = 0; i < images.size(); ++i) {
    save_png(dir / (dataset_stem(i) + ".png"), images[i]);
    save_btsr(dir / (dataset_stem(i) + ".btsr"), images[i]);
  }
}

// ------------------------------------------------------------------ commands

int cmd_simulate(const ExperimentConfig& cfg) {
  const auto toy = make_image_toy(cfg);
  for (const char* split : {"train", "test"}) fs::remove_all(split_dir(cfg, split));
  save_split(split_dir(cfg, "train"), toy.train);
  save_split(split_dir(cfg, "test"), toy.test);
  std::cout << "wrote " << toy.train.hr.size() << " train and " << toy.test.hr.size() << " test bursts under "
            << cfg.data_dir << "\n";
  return 0;
}

int cmd_baseline(const ExperimentConfig& cfg) {
  const auto test = load_split(split_dir(cfg, "test"), cfg.scale_factor);
  const auto dir = run_dir(cfg, "baseline");
  std::vector<Tensor> inits;
  for (const auto& p : test.pairs) inits.push_back(p.init);
  write_images(dir, inits);
  const auto rep = score_baseline(test.pairs);
  auto os = open_out(dir / "metrics.csv");
  rep.write_csv(os, config_hash(cfg));
  std::printf("baseline: mean PSNR %.3f dB, mean SSIM %.4f over %zu images -> %s\n", rep.mean_psnr(), rep.mean_ssim(),
              rep.images.size(), dir.c_str());
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  const auto train = load_split(split_dir(cfg, "train"), cfg.scale_factor);
  Model m({}, cfg.seed);
  m.cond_scale = static_cast<float>(cfg.cond_scale);
  auto opt = train_options_from(cfg);
  const auto dir = run_dir(cfg, "train");
  auto os = open_out(dir / "loss.csv");
  os << "config_hash,step,loss\n";
  const std::string hash = config_hash(cfg);
  opt.on_step = [&](std::size_t step, double loss) {
    os << hash << ',' << step << ',' << loss << '\n';
    if ((step + 1) % 100 == 0) std::fprintf(stderr, "step %zu/%zu loss %.5f\n", step + 1, cfg.train_steps, loss);
  };
  train_denoiser(m, train.pairs, opt);
  save_checkpoint(cfg.checkpoint, m);
  std::printf("teacher checkpoint -> %s\n", cfg.checkpoint.c_str());
  return 0;
}

int cmd_distill(const ExperimentConfig& cfg) {
  const auto train = load_split(split_dir(cfg, "train"), cfg.scale_factor);
  const Model teacher = load_model(cfg.checkpoint, cfg.cond_scale);
  Model student = cfg.warm_start ? teacher : Model({}, cfg.seed + 1);
  student.cond_scale = static_cast<float>(cfg.cond_scale);
  const ModelDenoiser<Model> d(teacher);
  const auto rep = consistency_distill(d, student, pair_source(train.pairs), distill_config_from(cfg));
  save_checkpoint(cfg.student_checkpoint, student);
  const auto dir = run_dir(cfg, "distill");
  auto os = open_out(dir / "loss.csv");
  os << "config_hash,iter,loss,update_norm,ema_gap\n";
  const std::string hash = config_hash(cfg);
  for (std::size_t i = 0; i < rep.loss.size(); ++i)
    os << hash << ',' << i << ',' << rep.loss[i] << ',' << rep.update_norm[i] << ',' << rep.ema_gap[i] << '\n';
  std::printf("student checkpoint (%s) -> %s\n", cfg.init_mode.c_str(), cfg.student_checkpoint.c_str());
  return 0;
}

/// Loads only the models the sampler needs.
struct LoadedModels {
  std::optional<Model> teacher, student;
  std::optional<ModelDenoiser<Model>> t, s;
  PipelineModels view() const { return {t ? &*t : nullptr, s ? &*s : nullptr}; }
};

void load_models(const ExperimentConfig& cfg, bool need_teacher, bool need_student, LoadedModels& out) {
  if (need_teacher) {
    out.teacher = load_model(cfg.checkpoint, cfg.cond_scale);
    out.t.emplace(*out.teacher);
  }
  if (need_student) {
    out.student = load_model(cfg.student_checkpoint, cfg.cond_scale);
    out.s.emplace(*out.student);
  }
}

int cmd_sample(const ExperimentConfig& cfg, std::size_t limit) {
  auto test = load_split(split_dir(cfg, "test"), cfg.scale_factor);
  if (limit > 0 && limit < test.pairs.size()) test.pairs.resize(limit);
  LoadedModels lm;
  load_models(cfg, cfg.sampler != "cm", cfg.sampler == "cm", lm);
  const auto models = lm.view();
  const std::size_t n = test.pairs.size();
  std::vector<Tensor> outs(n);
  std::vector<SamplerTrace> traces(n);
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    RngStream rng = image_rng(cfg, i);
    outs[i] = run_sampler(test.pairs[i].init, test.pairs[i].cond, cfg, models, rng, &traces[i]);
  });
  const auto dir = run_dir(cfg, "sample");
  write_images(dir, outs);
  const std::string hash = config_hash(cfg);
  for (std::size_t i = 0; i < n; ++i) {
    auto os = open_out(dir / (dataset_stem(i) + "_trace.csv"));
    traces[i].write_csv(os, hash);
  }
  std::vector<Tensor> hr;
  for (const auto& p : test.pairs) hr.push_back(p.hr);
  const auto rep = score_images(outs, hr);
  auto os = open_out(dir / "metrics.csv");
  rep.write_csv(os, hash);
  std::printf("%s: mean PSNR %.3f dB, mean SSIM %.4f, %zu denoiser calls/image over %zu images -> %s\n",
              cfg.sampler.c_str(), rep.mean_psnr(), rep.mean_ssim(), n ? traces[0].total_calls() : 0, n, dir.c_str());
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& axis_name, std::vector<double> values) {
  const SweepAxis axis = parse_sweep_axis(axis_name);
  if (values.empty()) values = sweep_values(cfg, axis);
  const auto test = load_split(split_dir(cfg, "test"), cfg.scale_factor);
  bool need_teacher = false, need_student = false;
  for (double v : values) {
    const auto row = with_axis(cfg, axis, v);
    (row.sampler == "cm" ? need_student : need_teacher) = true;
  }
  LoadedModels lm;
  load_models(cfg, need_teacher, need_student, lm);
  const auto table = run_sweep(cfg, axis, values, lm.view(), test.pairs);
  const auto dir = run_dir(cfg, "sweep_" + to_string(axis));
  auto os = open_out(dir / "sweep.csv");
  table.write_csv(os);
  for (const auto& row : table.rows) {
    std::ostringstream name;
    name << "value_" << row.value;
    write_images(dir / name.str(), row.outputs);
    std::printf("%s=%g: mean PSNR %.3f dB, mean SSIM %.4f, %.0f calls/image\n", to_string(axis).c_str(), row.value,
                row.report.mean_psnr(), row.report.mean_ssim(), row.calls_per_image);
  }
  std::printf("-> %s\n", (dir / "sweep.csv").c_str());
  return 0;
}

int cmd_bench(const ExperimentConfig& cfg, bool only_configured) {
  const auto test = load_split(split_dir(cfg, "test"), cfg.scale_factor);
  std::vector<ExperimentConfig> cfgs;
  if (only_configured) {
    cfgs.push_back(cfg);
  } else {
    ExperimentConfig ddpm = cfg, edm = cfg, cm = cfg;
    ddpm.sampler = "ddpm";
    ddpm.tau = 100;
    edm.sampler = "edm";
    cm.sampler = "cm";
    cfgs = {ddpm, edm, cm};
  }
  bool need_teacher = false, need_student = false;
  for (auto& c : cfgs) {
    c.jobs = 1;  // timing runs are single-threaded
    (c.sampler == "cm" ? need_student : need_teacher) = true;
  }
  LoadedModels lm;
  load_models(cfg, need_teacher, need_student, lm);
  const auto res = bench_runtime(cfgs, lm.view(), test.bursts);
  const auto dir = run_dir(cfg, "bench");
  auto os = open_out(dir / "bench.csv");
  write_bench_csv(os, res);
  for (const auto& r : res)
    std::printf("%-28s %.4f s/image  %.0f calls/image  (%zu images, hash %s)\n", r.id.c_str(), r.secs_per_image,
                r.calls_per_image, r.images, r.config_hash.c_str());
  std::printf("-> %s\n", (dir / "bench.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Burst super-resolution by skip-started diffusion and consistency distillation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("-c,--config", opt.config_file, "key = value config file");
  app.add_option("--set", opt.sets, "override a config field (key=value, repeatable)");

  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&opt, key](const std::string& v) { opt.flags[key] = v; }, help);
  };

  auto* simulate = app.add_subcommand("simulate", "synthesize train/test scenes and RAW bursts");
  flag(simulate, "--n-train", "n_train", "training scenes");
  flag(simulate, "--n-test", "n_test", "held-out scenes");
  flag(simulate, "--data-dir", "data_dir", "output directory");

  auto* baseline = app.add_subcommand("baseline", "score the deterministic burst SR initial estimates");

  auto* train = app.add_subcommand("train", "train the teacher denoiser");
  flag(train, "--steps", "train_steps", "optimiser steps");

  auto* distill = app.add_subcommand("distill", "distil the one-step consistency student");
  flag(distill, "--init-mode", "init_mode", "init-sr | noise");
  flag(distill, "--iters", "distill_iters", "distillation iterations");

  std::size_t limit = 0;
  auto* sample = app.add_subcommand("sample", "run the E-BSRD pipeline on the test split");
  flag(sample, "--sampler", "sampler", "ddpm | edm | cm");
  flag(sample, "--tau", "tau", "DDPM start step / EDM steps");
  flag(sample, "--sigma-max", "sigma_max", "skip-start noise level");
  flag(sample, "--tcm", "t_cm", "consistency steps");
  flag(sample, "--churn", "churn", "EDM churn");
  flag(sample, "--seed", "seed", "sampling seed");
  flag(sample, "--jobs", "jobs", "worker threads");
  sample->add_option("--limit", limit, "only the first N test images");

  std::string axis = "sigma_max";
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "metric table over sigma_max, tau or t_cm");
  sweep->add_option("--axis", axis, "sigma_max | tau | t_cm");
  sweep->add_option("--values", values, "axis values (default: the config's sweep list)")->delimiter(',');
  flag(sweep, "--sampler", "sampler", "sampler for non-t_cm axes");

  bool only_configured = false;
  auto* bench = app.add_subcommand("bench", "secs/image for DDPM tau=100, EDM and CM");
  bench->add_flag("--only", only_configured, "time just the configured sampler");
  flag(bench, "--images", "bench_images", "timed images per config");

  auto* config = app.add_subcommand("config", "configuration utilities");
  config->require_subcommand(1);
  auto* dump = config->add_subcommand("dump", "print every field with its value and origin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig cfg = resolve_config(opt);
    if (*simulate) return cmd_simulate(cfg);
    if (*baseline) return cmd_baseline(cfg);
    if (*train) return cmd_train(cfg);
    if (*distill) return cmd_distill(cfg);
    if (*sample) return cmd_sample(cfg, limit);
    if (*sweep) return cmd_sweep(cfg, axis, values);
    if (*bench) return cmd_bench(cfg, only_configured);
    if (*dump) {
      dump_config(std::cout, cfg);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
