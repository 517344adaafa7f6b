#pragma once

// Flat `key = value` experiment configuration with per-field origin tags,
// a stable hash, and the BDL_SEED override.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "bdl/tensor.hpp"

namespace bdl {

struct ExperimentConfig {
  // dataset
  std::string data_dir = "data";
  std::size_t n_train = 48;
  std::size_t n_test = 16;
  std::size_t hr_size = 32;
  std::size_t scale_factor = 2;
  std::size_t burst_size = 8;
  double max_translation = 3.0;
  double max_rotation = 1.0;
  double noise_sigma = 0.02;
  std::uint64_t data_seed = 7;

  // models
  std::string checkpoint = "runs/models/teacher";
  std::string student_checkpoint = "runs/models/student";
  double cond_scale = 1.0;

  // teacher training
  std::size_t train_steps = 4000;
  std::size_t batch_size = 4;
  double lr = 2e-3;
  double p_mean = -3.912023005428146;  // ln 0.02
  double p_std = 1.0;
  double sigma_min_train = 0.002;
  double sigma_max_train = 80.0;

  // sampling
  std::string sampler = "edm";
  std::size_t tau = 40;
  double sigma_max = 0.03;
  std::size_t t_cm = 1;
  double churn = 0.0;
  std::size_t ddpm_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double sigma_min = 0.002;
  double rho = 7.0;

  // distillation
  std::size_t distill_iters = 3000;
  std::size_t distill_levels = 18;
  double ema_decay = 0.95;
  std::string distill_loss = "pseudo-huber";
  double huber_c = 0.03;
  std::string init_mode = "init-sr";
  double distill_lr = 5e-4;
  bool warm_start = true;

  // sweeps and benchmarking
  std::vector<double> sweep_sigma_max = {80, 0.2, 0.08, 0.05, 0.03, 0.01, 0.005};
  std::vector<double> sweep_tau = {1, 2, 3, 5, 10, 20, 40};
  std::vector<double> sweep_t_cm = {1, 2, 3, 4, 5, 11};
  std::size_t bench_images = 20;
  std::size_t bench_warmup = 3;
  std::size_t jobs = 1;

  std::uint64_t seed = 0;
  std::string runs_dir = "runs";

  /// Where each field's current value came from (filled by the loaders).
  std::map<std::string, std::string> overrides;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_value(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
inline std::string fmt_value(std::size_t v) { return std::to_string(v); }
inline std::string fmt_value(std::uint64_t v, int) { return std::to_string(v); }
inline std::string fmt_value(const std::string& v) { return v; }
inline std::string fmt_value(bool v) { return v ? "true" : "false"; }
inline std::string fmt_value(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_value(v[i]);
  return out;
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  }
}
inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
  }
}
inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}
inline std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

}  // namespace detail

/// One configurable field: key, origin tag of its default, one-line help.
struct ConfigField {
  std::string key;
  std::string origin;  // reported | design | convention
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

namespace detail {

template <class V>
ConfigField make_field(std::string key, std::string origin, std::string help, V ExperimentConfig::*m) {
  ConfigField f{key, std::move(origin), std::move(help), {}, {}};
  f.get = [m](const ExperimentConfig& c) {
    if constexpr (std::is_same_v<V, std::uint64_t>)
      return fmt_value(c.*m, 0);
    else
      return fmt_value(c.*m);
  };
  f.set = [m, key](ExperimentConfig& c, const std::string& s) {
    if constexpr (std::is_same_v<V, double>)
      c.*m = parse_double(key, s);
    else if constexpr (std::is_same_v<V, bool>)
      c.*m = parse_bool(key, s);
    else if constexpr (std::is_same_v<V, std::string>)
      c.*m = s;
    else if constexpr (std::is_same_v<V, std::vector<double>>)
      c.*m = parse_list(key, s);
    else
      c.*m = static_cast<V>(parse_uint(key, s));
  };
  return f;
}

}  // namespace detail

inline const std::vector<ConfigField>& config_fields() {
  using detail::make_field;
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = {
      make_field("data_dir", "design", "synthetic dataset directory", &C::data_dir),
      make_field("n_train", "design", "training scenes", &C::n_train),
      make_field("n_test", "design", "held-out scenes", &C::n_test),
      make_field("hr_size", "design", "HR crop side in pixels", &C::hr_size),
      make_field("scale_factor", "design", "SR factor over the demosaiced sensor resolution", &C::scale_factor),
      make_field("burst_size", "reported", "frames per burst", &C::burst_size),
      make_field("max_translation", "reported", "max shift in HR pixels (24 at 256, scaled with the crop)",
                 &C::max_translation),
      make_field("max_rotation", "reported", "max rotation in degrees", &C::max_rotation),
      make_field("noise_sigma", "design", "read-noise std on the RAW planes", &C::noise_sigma),
      make_field("data_seed", "design", "seed for scene and burst synthesis", &C::data_seed),
      make_field("checkpoint", "design", "teacher checkpoint directory", &C::checkpoint),
      make_field("student_checkpoint", "design", "consistency student checkpoint directory", &C::student_checkpoint),
      make_field("cond_scale", "design", "SFT conditioning strength", &C::cond_scale),
      make_field("train_steps", "design", "teacher optimiser steps", &C::train_steps),
      make_field("batch_size", "design", "images per optimiser step", &C::batch_size),
      make_field("lr", "design", "teacher Adam learning rate", &C::lr),
      make_field("p_mean", "convention", "log-normal training sigma: mean of ln sigma (ln 0.02)", &C::p_mean),
      make_field("p_std", "convention", "log-normal training sigma: std of ln sigma", &C::p_std),
      make_field("sigma_min_train", "convention", "lower truncation of training sigma", &C::sigma_min_train),
      make_field("sigma_max_train", "convention", "upper truncation of training sigma", &C::sigma_max_train),
      make_field("sampler", "design", "ddpm | edm | cm", &C::sampler),
      make_field("tau", "reported", "DDPM start step or EDM step count", &C::tau),
      make_field("sigma_max", "reported", "skip-start noise level", &C::sigma_max),
      make_field("t_cm", "reported", "consistency sampling steps", &C::t_cm),
      make_field("churn", "design", "EDM stochastic churn", &C::churn),
      make_field("ddpm_steps", "convention", "DDPM schedule length T", &C::ddpm_steps),
      make_field("beta_start", "convention", "first DDPM beta", &C::beta_start),
      make_field("beta_end", "convention", "last DDPM beta", &C::beta_end),
      make_field("sigma_min", "convention", "EDM ladder floor", &C::sigma_min),
      make_field("rho", "convention", "EDM ladder exponent", &C::rho),
      make_field("distill_iters", "design", "distillation iterations", &C::distill_iters),
      make_field("distill_levels", "convention", "distillation ladder levels", &C::distill_levels),
      make_field("ema_decay", "design", "target-network EMA decay", &C::ema_decay),
      make_field("distill_loss", "design", "l2 | pseudo-huber", &C::distill_loss),
      make_field("huber_c", "design", "pseudo-Huber constant", &C::huber_c),
      make_field("init_mode", "reported", "init-sr | noise", &C::init_mode),
      make_field("distill_lr", "design", "student Adam learning rate", &C::distill_lr),
      make_field("warm_start", "design", "initialise the student from the teacher", &C::warm_start),
      make_field("sweep_sigma_max", "reported", "sigma_max sweep values", &C::sweep_sigma_max),
      make_field("sweep_tau", "design", "tau sweep values", &C::sweep_tau),
      make_field("sweep_t_cm", "reported", "T_CM sweep values", &C::sweep_t_cm),
      make_field("bench_images", "design", "timed images per benchmark config", &C::bench_images),
      make_field("bench_warmup", "design", "untimed warm-up images", &C::bench_warmup),
      make_field("jobs", "design", "worker count (timing forces 1)", &C::jobs),
      make_field("seed", "design", "sampling seed (BDL_SEED overrides)", &C::seed),
      make_field("runs_dir", "design", "output root", &C::runs_dir),
  };
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                             const std::string& origin) {
  config_field(key).set(cfg, value);
  cfg.overrides[key] = origin;
}

inline void validate_config(const ExperimentConfig& c) {
  if (c.sampler != "ddpm" && c.sampler != "edm" && c.sampler != "cm")
    throw ConfigError("sampler must be ddpm, edm or cm (got '" + c.sampler + "')");
  if (c.distill_loss != "l2" && c.distill_loss != "pseudo-huber")
    throw ConfigError("distill_loss must be l2 or pseudo-huber");
  if (c.init_mode != "init-sr" && c.init_mode != "noise") throw ConfigError("init_mode must be init-sr or noise");
  if (c.scale_factor != 2 && c.scale_factor != 4 && c.scale_factor != 8)
    throw ConfigError("scale_factor must be 2, 4 or 8");
  if (c.hr_size % (2 * c.scale_factor * 4) != 0)
    throw ConfigError("hr_size must be a multiple of 8 * scale_factor");
  if (c.tau < 1) throw ConfigError("tau must be >= 1");
  if (c.sampler == "ddpm" && c.tau > c.ddpm_steps) throw ConfigError("tau exceeds ddpm_steps");
  if (c.t_cm < 1) throw ConfigError("t_cm must be >= 1");
  if (!(c.sigma_max >= 0.0)) throw ConfigError("sigma_max must be >= 0");
  if (!(c.ema_decay >= 0.9 && c.ema_decay <= 0.99999)) throw ConfigError("ema_decay must lie in [0.9, 0.99999]");
  if (c.n_test < 1 || c.n_train < 1) throw ConfigError("n_train and n_test must be >= 1");
  if (c.burst_size < 1) throw ConfigError("burst_size must be >= 1");
}

/// Applies BDL_SEED when set.
inline void apply_environment(ExperimentConfig& cfg) {
  if (const char* s = std::getenv("BDL_SEED"); s && *s) set_config_value(cfg, "seed", s, "env");
}

/// Parses `key = value` lines; `#` starts a comment.
inline void parse_config(std::istream& is, ExperimentConfig& cfg, const std::string& origin = "file") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), origin);
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    parse_config(f, cfg);
  }
  apply_environment(cfg);
  validate_config(cfg);
  return cfg;
}

/// Canonical `key = value` text (no comments); the hash is taken over this.
inline std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = canonical_config(cfg);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(s.data(), s.size());
  return os.str();
}

/// Every field with its value and origin tag; re-parseable as a config file.
inline void dump_config(std::ostream& os, const ExperimentConfig& cfg) {
  os << "# config hash " << config_hash(cfg) << "\n";
  for (const auto& f : config_fields()) {
    const auto it = cfg.overrides.find(f.key);
    const std::string origin = it == cfg.overrides.end() ? f.origin : it->second;
    os << f.key << " = " << f.get(cfg) << "  # [" << origin << "] " << f.help << "\n";
  }
}

}  // namespace bdl
