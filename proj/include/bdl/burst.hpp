#pragma once

// Synthetic RAW burst generation: warp -> box downsample -> RGGB mosaic -> noise.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "bdl/image.hpp"
#include "bdl/io.hpp"
#include "bdl/rng.hpp"

namespace bdl {

struct FrameMotion {
  double dx = 0.0;     // HR pixels
  double dy = 0.0;     // HR pixels
  double theta = 0.0;  // degrees
  friend bool operator==(const FrameMotion&, const FrameMotion&) = default;
};

struct DegradationParams {
  double max_translation = 6.0;  // HR px; 24 px at 256x256 scaled to a 64x64 crop
  double max_rotation = 1.0;     // degrees
  int scale_factor = 4;
  double noise_sigma = 0.02;
  std::size_t burst_size = 8;
  std::uint64_t seed = 0;

  /// Protocol defaults for a square HR crop of `hr_size` pixels.
  static DegradationParams for_crop(std::size_t hr_size, int scale_factor) {
    DegradationParams p;
    p.max_translation = 24.0 * static_cast<double>(hr_size) / 256.0;
    p.scale_factor = scale_factor;
    return p;
  }

  void validate() const {
    if (!(max_translation >= 0.0)) throw ParameterError("max_translation must be >= 0");
    if (!(max_rotation >= 0.0) || max_rotation >= 90.0) throw ParameterError("max_rotation must be in [0, 90)");
    if (scale_factor != 2 && scale_factor != 4 && scale_factor != 8)
      throw ParameterError("scale_factor must be 2, 4 or 8");
    if (!(noise_sigma >= 0.0 && noise_sigma <= 1.0)) throw ParameterError("noise_sigma must be in [0, 1]");
    if (burst_size == 0) throw ParameterError("burst_size must be >= 1");
  }
};

/// N RAW frames of shape [4, h, w] (RGGB planes) plus their ground-truth motion.
struct BurstStack {
  std::vector<Tensor> frames;
  std::vector<FrameMotion> offsets;
  std::size_t reference_index = 0;

  std::size_t size() const noexcept { return frames.size(); }
  std::size_t raw_height() const { return frames.at(0).height(); }
  std::size_t raw_width() const { return frames.at(0).width(); }

  void validate() const {
    if (frames.empty()) throw ShapeError("burst stack is empty");
    if (offsets.size() != frames.size()) throw ShapeError("burst stack: offsets/frames count mismatch");
    if (reference_index >= frames.size()) throw ShapeError("burst stack: reference index out of range");
    for (const auto& f : frames)
      if (f.rank() != 3 || f.channels() != 4 || !f.same_shape(frames[0]))
        throw ShapeError("burst stack: frames must share shape [4,h,w]");
  }
};

/// RGGB subsampling: R(even,even), G(even,odd), G(odd,even), B(odd,odd) as (row,col).
template <class T>
BasicTensor<T> mosaic_rggb(const BasicTensor<T>& rgb) {
  if (rgb.rank() != 3 || rgb.channels() != 3) throw ShapeError("mosaic_rggb: expected [3,H,W]");
  const std::size_t h = rgb.height(), w = rgb.width();
  if (h % 2 || w % 2) throw ShapeError("mosaic_rggb: H and W must be even");
  BasicTensor<T> raw = BasicTensor<T>::image(4, h / 2, w / 2);
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t x = 0; x < w / 2; ++x) {
      raw.at(0, y, x) = rgb.at(0, 2 * y, 2 * x);
      raw.at(1, y, x) = rgb.at(1, 2 * y, 2 * x + 1);
      raw.at(2, y, x) = rgb.at(1, 2 * y + 1, 2 * x);
      raw.at(3, y, x) = rgb.at(2, 2 * y + 1, 2 * x + 1);
    }
  return raw;
}

/// One frame of the degradation pipeline. `noise_rng` supplies the sensor noise.
inline Tensor degrade_frame(const Tensor& hr, const FrameMotion& m, const DegradationParams& p,
                            RngStream noise_rng) {
  Tensor warped = warp_affine(hr, m.dx, m.dy, m.theta);
  Tensor raw = mosaic_rggb(box_downsample(warped, static_cast<std::size_t>(p.scale_factor)));
  if (p.noise_sigma > 0.0) raw.axpy(static_cast<float>(p.noise_sigma), gaussian_noise(noise_rng, raw.dims()));
  raw.clamp(0.0f, 1.0f);
  return raw;
}

/// Motions come from `rng` in frame order; frame k's noise comes from rng.substream(k)
/// (taken before any draw), so stored offsets are sufficient to regenerate each frame.
inline BurstStack synthesize_burst(const Tensor& hr, const DegradationParams& p, RngStream& rng) {
  p.validate();
  if (hr.rank() != 3 || hr.channels() != 3) throw ShapeError("synthesize_burst: expected [3,H,W] HR image");
  const auto block = static_cast<std::size_t>(2 * p.scale_factor);
  if (hr.height() % block || hr.width() % block)
    throw ShapeError("synthesize_burst: HR dims must be divisible by 2*scale_factor");

  const RngStream noise_root = rng;
  BurstStack stack;
  stack.reference_index = 0;
  for (std::size_t k = 0; k < p.burst_size; ++k) {
    FrameMotion m;
    if (k != stack.reference_index) {
      m.dx = rng.uniform(-p.max_translation, p.max_translation);
      m.dy = rng.uniform(-p.max_translation, p.max_translation);
      m.theta = rng.uniform(-p.max_rotation, p.max_rotation);
    }
    stack.offsets.push_back(m);
    stack.frames.push_back(degrade_frame(hr, m, p, noise_root.substream(k)));
  }
  return stack;
}

/// Smooth random RGB scene in [0, 1]: colour gradient, soft-edged shapes and a
/// sinusoidal texture. Stands in for natural HR crops.
inline Tensor procedural_scene(RngStream& rng, std::size_t size) {
  const double n = static_cast<double>(size);
  Tensor img = Tensor::image(3, size, size);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.15, 0.85);
    c1[c] = rng.uniform(0.15, 0.85);
  }
  const double ga = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((x / n - 0.5) * std::cos(ga) + (y / n - 0.5) * std::sin(ga));
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
    }

  const int shapes = 3 + static_cast<int>(rng.uniform() * 4.0);
  for (int s = 0; s < shapes; ++s) {
    const double cx = rng.uniform(0.0, n), cy = rng.uniform(0.0, n);
    const double rx = rng.uniform(0.08, 0.35) * n, ry = rng.uniform(0.08, 0.35) * n;
    const double rot = rng.uniform(0.0, std::numbers::pi);
    const bool ellipse = rng.uniform() < 0.5;
    double col[3];
    for (auto& v : col) v = rng.uniform(0.05, 0.95);
    const double alpha = rng.uniform(0.5, 1.0);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (x + 0.5 - cx) * std::cos(rot) + (y + 0.5 - cy) * std::sin(rot);
        const double v = -(x + 0.5 - cx) * std::sin(rot) + (y + 0.5 - cy) * std::cos(rot);
        // signed distance-like value in pixels; negative inside
        const double d = ellipse ? (std::hypot(u / rx, v / ry) - 1.0) * std::min(rx, ry)
                                 : std::max(std::fabs(u) - rx, std::fabs(v) - ry);
        const double cover = alpha / (1.0 + std::exp(d / 0.6));
        for (int c = 0; c < 3; ++c) {
          float& p = img.at(c, y, x);
          p = static_cast<float>(p + (col[c] - p) * cover);
        }
      }
  }

  const double period = rng.uniform(3.0, 10.0);
  const double ta = rng.uniform(0.0, std::numbers::pi);
  const double amp = rng.uniform(0.03, 0.12);
  const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double g = amp * std::sin(2.0 * std::numbers::pi * (x * std::cos(ta) + y * std::sin(ta)) / period + ph);
      for (int c = 0; c < 3; ++c) {
        float& p = img.at(c, y, x);
        p = static_cast<float>(std::clamp(p + g, 0.02, 0.98));
      }
    }
  return img;
}

// ---- dataset layout: hr/NNNN.btsr, burst/NNNN_f{K}.btsr, meta/NNNN.txt ----

inline std::string dataset_stem(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return buf;
}

inline void save_sample(const std::filesystem::path& root, std::size_t index, const Tensor& hr,
                        const BurstStack& stack) {
  const auto stem = dataset_stem(index);
  save_btsr(root / "hr" / (stem + ".btsr"), hr);
  for (std::size_t k = 0; k < stack.size(); ++k)
    save_btsr(root / "burst" / (stem + "_f" + std::to_string(k) + ".btsr"), stack.frames[k]);
  std::filesystem::create_directories(root / "meta");
  std::ofstream meta(root / "meta" / (stem + ".txt"));
  if (!meta) throw IoError("cannot write meta for sample " + stem);
  meta << "# reference_index " << stack.reference_index << '\n';
  meta << std::setprecision(17);
  for (std::size_t k = 0; k < stack.size(); ++k)
    meta << k << ' ' << stack.offsets[k].dx << ' ' << stack.offsets[k].dy << ' ' << stack.offsets[k].theta << '\n';
}

inline BurstStack load_burst(const std::filesystem::path& root, std::size_t index) {
  const auto stem = dataset_stem(index);
  std::ifstream meta(root / "meta" / (stem + ".txt"));
  if (!meta) throw IoError("missing meta file for sample " + stem + " under " + root.string());
  BurstStack stack;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string key;
      if (is >> key && key == "reference_index") is >> stack.reference_index;
      continue;
    }
    std::istringstream is(line);
    std::size_t k;
    FrameMotion m;
    if (!(is >> k >> m.dx >> m.dy >> m.theta)) throw IoError("malformed meta line: " + line);
    if (k != stack.offsets.size()) throw IoError("meta frames out of order for sample " + stem);
    stack.offsets.push_back(m);
    stack.frames.push_back(load_btsr(root / "burst" / (stem + "_f" + std::to_string(k) + ".btsr")));
  }
  stack.validate();
  return stack;
}

inline Tensor load_hr(const std::filesystem::path& root, std::size_t index) {
  return load_btsr(root / "hr" / (dataset_stem(index) + ".btsr"));
}

inline std::size_t count_samples(const std::filesystem::path& root) {
  std::size_t n = 0;
  while (std::filesystem::exists(root / "meta" / (dataset_stem(n) + ".txt"))) ++n;
  return n;
}

}  // namespace bdl
