#pragma once

// Deterministic burst SR used as the diffusion initialiser: phase-correlation
// alignment, bilinear demosaic, confidence-weighted fusion, bicubic upsampling.

#include <complex>
#include <numeric>

#include "bdl/burst.hpp"
#include "bdl/image.hpp"

namespace bdl {

struct Shift {
  double dx = 0.0;
  double dy = 0.0;
};

/// Per-frame translation of each frame relative to the reference, in RAW-plane pixels.
struct AlignmentEstimate {
  std::vector<Shift> shifts;
  std::vector<double> confidence;

  std::size_t size() const noexcept { return shifts.size(); }
};

namespace detail {

using cplx = std::complex<double>;

// Separable 2-D DFT of an h x w array (row-major). sign = -1 forward, +1 inverse (unscaled).
inline std::vector<cplx> dft2(const std::vector<cplx>& in, std::size_t h, std::size_t w, int sign) {
  auto twiddles = [sign](std::size_t n) {
    std::vector<cplx> t(n);
    for (std::size_t k = 0; k < n; ++k)
      t[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    return t;
  };
  const auto tw = twiddles(w), th = twiddles(h);
  std::vector<cplx> rows(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t u = 0; u < w; ++u) {
      cplx s = 0.0;
      for (std::size_t x = 0; x < w; ++x) s += in[y * w + x] * tw[(u * x) % w];
      rows[y * w + u] = s;
    }
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) {
      cplx s = 0.0;
      for (std::size_t y = 0; y < h; ++y) s += rows[y * w + u] * th[(v * y) % h];
      out[v * w + u] = s;
    }
  return out;
}

inline std::vector<double> green_plane(const Tensor& raw) {
  std::vector<double> g(raw.height() * raw.width());
  const auto g1 = raw.plane(1), g2 = raw.plane(2);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.5 * (static_cast<double>(g1[i]) + g2[i]);
  return g;
}

// Vertex offset of the parabola through (-1, m), (0, c), (1, p); 0 when not a maximum.
inline double parabolic_offset(double m, double c, double p) {
  const double denom = m - 2.0 * c + p;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (m - p) / denom, -0.5, 0.5);
}

}  // namespace detail

struct PhaseCorrelation {
  Shift shift;
  double peak = 0.0;
};

/// Translation d such that moving `ref` by d gives `moving`; peak is the
/// normalised correlation height in [0, 1]. Both planes are Hann-windowed.
/// With `smoothing` > 0 the whitened cross spectrum is tapered by
/// exp(-|f|^2 / smoothing^2) (f in cycles/pixel) and the peak is located by a
/// parabola through the log surface; otherwise a plain parabola is used.
inline PhaseCorrelation phase_correlate(const std::vector<double>& ref, const std::vector<double>& moving,
                                        std::size_t h, std::size_t w, double smoothing = 0.0) {
  auto hann = [](std::size_t i, std::size_t n) {
    return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  };
  auto windowed = [&](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::vector<detail::cplx> out(v.size());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[y * w + x] = (v[y * w + x] - m) * hann(y, h) * hann(x, w);
    return out;
  };
  auto freq = [](std::size_t i, std::size_t n) {
    return (i > n / 2 ? static_cast<double>(i) - static_cast<double>(n) : static_cast<double>(i)) / static_cast<double>(n);
  };
  const auto fa = detail::dft2(windowed(ref), h, w, -1);
  const auto fb = detail::dft2(windowed(moving), h, w, -1);

  std::vector<detail::cplx> cross(h * w);
  double max_mag = 0.0;
  for (std::size_t i = 0; i < cross.size(); ++i) {
    cross[i] = fb[i] * std::conj(fa[i]);
    max_mag = std::max(max_mag, std::abs(cross[i]));
  }
  PhaseCorrelation res;
  if (!(max_mag > 1e-20)) return res;

  double norm = 0.0;
  for (std::size_t i = 0; i < cross.size(); ++i) {
    auto& c = cross[i];
    const double mag = std::abs(c);
    if (mag > 1e-6 * max_mag) {
      double taper = 1.0;
      if (smoothing > 0.0) {
        const double fu = freq(i % w, w), fv = freq(i / w, h);
        taper = std::exp(-(fu * fu + fv * fv) / (smoothing * smoothing));
      }
      c *= taper / mag;
      norm += taper;
    } else {
      c = 0.0;
    }
  }
  const auto surf_c = detail::dft2(cross, h, w, +1);
  std::vector<double> surf(h * w);
  for (std::size_t i = 0; i < surf.size(); ++i) surf[i] = surf_c[i].real() / norm;

  const auto best = static_cast<std::size_t>(std::max_element(surf.begin(), surf.end()) - surf.begin());
  const std::size_t py = best / w, px = best % w;
  auto at = [&](std::size_t y, std::size_t x) { return surf[(y % h) * w + (x % w)]; };
  const double c = surf[best];
  auto offset = [&](double m, double p) {
    if (smoothing > 0.0 && m > 0.0 && p > 0.0 && c > 0.0)
      return detail::parabolic_offset(std::log(m), std::log(c), std::log(p));
    return detail::parabolic_offset(m, c, p);
  };
  const double ox = offset(at(py, px + w - 1), at(py, px + 1));
  const double oy = offset(at(py + h - 1, px), at(py + 1, px));
  res.shift = {freq(px, w) * static_cast<double>(w) + ox, freq(py, h) * static_cast<double>(h) + oy};
  res.peak = std::clamp(c, 0.0, 1.0);
  return res;
}

/// Phase correlation of each frame's green average against the reference
/// frame: an integer-accurate first pass, then two passes that warp the frame
/// back by the running estimate and add the smoothed residual. Rotation is not
/// modelled. Confidence is the first-pass peak height.
inline AlignmentEstimate estimate_shifts(const BurstStack& stack) {
  stack.validate();
  if (stack.size() < 2) throw ShapeError("estimate_shifts: need at least 2 frames");
  const std::size_t h = stack.raw_height(), w = stack.raw_width();
  const auto ref = detail::green_plane(stack.frames[stack.reference_index]);
  AlignmentEstimate est;
  est.shifts.resize(stack.size());
  est.confidence.resize(stack.size());
  for (std::size_t k = 0; k < stack.size(); ++k) {
    if (k == stack.reference_index) {
      est.shifts[k] = {0.0, 0.0};
      est.confidence[k] = 1.0;
      continue;
    }
    const auto moving = detail::green_plane(stack.frames[k]);
    const auto pc = phase_correlate(ref, moving, h, w);
    est.confidence[k] = pc.peak;
    if (!(pc.peak > 0.0)) continue;
    Shift s = pc.shift;
    const BasicTensor<double> plane({1, h, w}, moving);
    for (int pass = 0; pass < 2; ++pass) {
      const auto back = warp_affine(plane, -s.dx, -s.dy, 0.0);
      const auto r = phase_correlate(ref, std::vector<double>(back.values().begin(), back.values().end()), h, w, 0.2);
      s.dx += r.shift.dx;
      s.dy += r.shift.dy;
    }
    est.shifts[k] = s;
  }
  return est;
}

/// Alignment for a stack whose motion is known to be zero (or single-frame stacks).
inline AlignmentEstimate identity_alignment(std::size_t frames) {
  return {std::vector<Shift>(frames), std::vector<double>(frames, 1.0)};
}

namespace detail {

inline constexpr double kTentRadius = 1.25;  // in sensor-resolution RGB pixels

// Normalised-convolution accumulator on the [3, 2h, 2w] RGB grid. Each RAW
// sample lands at its sensor position moved back by the frame shift and is
// spread with a separable tent kernel over its own colour channel.
struct TentAccumulator {
  std::size_t h, w;
  std::vector<double> num, den;

  TentAccumulator(std::size_t height, std::size_t width) : h(height), w(width), num(3 * h * w, 0.0), den(3 * h * w, 0.0) {}

  void add(const Tensor& raw, Shift shift, double weight) {
    static constexpr int kColour[4] = {0, 1, 1, 2};
    const double r = kTentRadius;
    const int reach = static_cast<int>(std::ceil(r));
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t y = 0; y < raw.height(); ++y)
        for (std::size_t x = 0; x < raw.width(); ++x) {
          const double v = raw.at(p, y, x);
          // RAW-plane shifts are half a sensor pixel per unit on the RGB grid
          const double py = 2.0 * static_cast<double>(y) + static_cast<double>(p / 2) - 2.0 * shift.dy;
          const double px = 2.0 * static_cast<double>(x) + static_cast<double>(p % 2) - 2.0 * shift.dx;
          const int jy = static_cast<int>(std::floor(py)), ix = static_cast<int>(std::floor(px));
          for (int j = jy - reach + 1; j <= jy + reach; ++j) {
            if (j < 0 || j >= static_cast<int>(h)) continue;
            const double ay = 1.0 - std::abs(j - py) / r;
            if (ay <= 0.0) continue;
            for (int i = ix - reach + 1; i <= ix + reach; ++i) {
              if (i < 0 || i >= static_cast<int>(w)) continue;
              const double ax = 1.0 - std::abs(i - px) / r;
              if (ax <= 0.0) continue;
              const std::size_t idx = (static_cast<std::size_t>(kColour[p]) * h + static_cast<std::size_t>(j)) * w +
                                      static_cast<std::size_t>(i);
              num[idx] += weight * ay * ax * v;
              den[idx] += weight * ay * ax;
            }
          }
        }
  }

  // Grid points no sample reaches (only possible at borders under large shifts) take `fallback`.
  Tensor resolve(const Tensor* fallback = nullptr) const {
    Tensor out = Tensor::image(3, h, w);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = den[i] > 1e-12 ? static_cast<float>(num[i] / den[i]) : (fallback ? (*fallback)[i] : 0.0f);
    return out;
  }
};

}  // namespace detail

/// Demosaic of [4, h, w] RGGB planes to [3, 2h, 2w] RGB by normalised
/// convolution of each colour's samples with a separable tent kernel.
inline Tensor demosaic(const Tensor& raw) {
  if (raw.rank() != 3 || raw.channels() != 4) throw ShapeError("demosaic: expected [4,h,w]");
  detail::TentAccumulator acc(2 * raw.height(), 2 * raw.width());
  acc.add(raw, {}, 1.0);
  return acc.resolve();
}

/// Fused burst at sensor resolution: every frame's samples are moved back by
/// its estimated shift and pooled into one normalised convolution weighted by
/// confidence. `std` is the weighted spread of the per-frame reconstructions.
/// Frames are visited in a canonical order, so the result does not depend on
/// how the non-reference frames are ordered.
struct FusedBurst {
  Tensor mean;  // [3, 2h, 2w]
  Tensor std;   // [3, 2h, 2w]
};

inline FusedBurst fuse_aligned(const BurstStack& stack, const AlignmentEstimate& align) {
  stack.validate();
  if (align.size() != stack.size()) throw ShapeError("alignment does not cover every frame");

  std::vector<std::size_t> order(stack.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if ((a == stack.reference_index) != (b == stack.reference_index)) return a == stack.reference_index;
    return stack.frames[a].storage() < stack.frames[b].storage();
  });

  std::vector<double> weight;
  double wsum = 0.0;
  for (auto k : order) {
    weight.push_back(std::clamp(align.confidence[k], 0.0, 1.0));
    wsum += weight.back();
  }
  if (!(wsum > 0.0)) {
    // nothing usable beyond the reference
    std::fill(weight.begin(), weight.end(), 0.0);
    weight[0] = 1.0;
    wsum = 1.0;
  }

  const std::size_t h = 2 * stack.raw_height(), w = 2 * stack.raw_width();
  detail::TentAccumulator pooled(h, w);
  std::vector<Tensor> per_frame;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto k = order[i];
    if (weight[i] > 0.0) pooled.add(stack.frames[k], align.shifts[k], weight[i]);
    detail::TentAccumulator one(h, w);
    one.add(stack.frames[k], align.shifts[k], 1.0);
    per_frame.push_back(one.resolve());
  }
  FusedBurst out{pooled.resolve(&per_frame[0]), Tensor::image(3, h, w)};
  for (std::size_t i = 0; i < out.std.size(); ++i) {
    // pairwise form: exactly zero when all frames agree
    double var = 0.0;
    for (std::size_t a = 0; a < per_frame.size(); ++a)
      for (std::size_t b = a + 1; b < per_frame.size(); ++b) {
        const double diff = static_cast<double>(per_frame[a][i]) - per_frame[b][i];
        var += weight[a] * weight[b] * diff * diff;
      }
    out.std[i] = static_cast<float>(std::sqrt(var / (wsum * wsum)));
  }
  return out;
}

/// Initial SR estimate x'_0 in [0, 1] at HR size [3, 2h*sf, 2w*sf].
inline Tensor fuse_and_upsample(const BurstStack& stack, const AlignmentEstimate& align, int scale_factor) {
  if (scale_factor < 1) throw ParameterError("fuse_and_upsample: scale_factor must be >= 1");
  Tensor hr = resize_bicubic(fuse_aligned(stack, align).mean, static_cast<double>(scale_factor));
  hr.clamp(0.0f, 1.0f);
  return hr;
}

inline Tensor baseline_sr(const BurstStack& stack, int scale_factor) {
  const auto align = stack.size() >= 2 ? estimate_shifts(stack) : identity_alignment(stack.size());
  return fuse_and_upsample(stack, align, scale_factor);
}

}  // namespace bdl
