#pragma once

#include <cmath>
#include <numbers>

#include "bdl/tensor.hpp"

namespace bdl {

/// Catmull-Rom cubic convolution kernel (Keys, a = -0.5).
inline double catmull_rom(double t) {
  constexpr double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace detail {

struct CubicTaps {
  int index[4];
  double weight[4];
};

// Half-pixel-centre mapping: output sample i sits at ((i + 0.5) * in / out - 0.5) in input space.
inline std::vector<CubicTaps> cubic_taps(std::size_t in, std::size_t out) {
  std::vector<CubicTaps> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const int last = static_cast<int>(in) - 1;
  for (std::size_t i = 0; i < out; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      taps[i].index[k] = std::clamp(static_cast<int>(base) - 1 + k, 0, last);
      taps[i].weight[k] = catmull_rom(t + 1.0 - k);
    }
  }
  return taps;
}

}  // namespace detail

/// Bicubic resampling of a [C, H, W] image by `scale` (output size rounded).
/// Edge samples are clamped; scale == 1 returns an exact copy.
template <class T>
BasicTensor<T> resize_bicubic(const BasicTensor<T>& img, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ParameterError("resize_bicubic: scale must be > 0");
  const std::size_t c = img.channels(), h = img.height(), w = img.width();
  if (h < 4 || w < 4) throw ShapeError("resize_bicubic: H and W must be >= 4");
  const auto oh = static_cast<std::size_t>(std::lround(static_cast<double>(h) * scale));
  const auto ow = static_cast<std::size_t>(std::lround(static_cast<double>(w) * scale));
  if (oh == 0 || ow == 0) throw ParameterError("resize_bicubic: scale produces an empty image");
  if (oh == h && ow == w) return img;

  const auto tx = detail::cubic_taps(w, ow);
  const auto ty = detail::cubic_taps(h, oh);
  BasicTensor<T> out = BasicTensor<T>::image(c, oh, ow);
  std::vector<double> rows(h * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += tx[x].weight[k] * static_cast<double>(img.at(ch, y, tx[x].index[k]));
        rows[y * ow + x] = s;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += ty[y].weight[k] * rows[ty[y].index[k] * ow + x];
        out.at(ch, y, x) = static_cast<T>(s);
      }
  }
  return out;
}

/// Bilinear sample of one plane at (x, y) with coordinates clamped to the image.
template <class T>
double sample_bilinear(const BasicTensor<T>& img, std::size_t ch, double x, double y) {
  const double w1 = static_cast<double>(img.width() - 1), h1 = static_cast<double>(img.height() - 1);
  x = std::clamp(x, 0.0, w1);
  y = std::clamp(y, 0.0, h1);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = (1.0 - fx) * img.at(ch, y0, x0) + fx * img.at(ch, y0, x1);
  const double bot = (1.0 - fx) * img.at(ch, y1, x0) + fx * img.at(ch, y1, x1);
  return (1.0 - fy) * top + fy * bot;
}

/// Rotates the content by `theta_deg` about the image centre, then translates
/// it by (dx, dy): out(p) = in(R(-theta) (p - c - d) + c), bilinear, edge-clamped.
template <class T>
BasicTensor<T> warp_affine(const BasicTensor<T>& img, double dx, double dy, double theta_deg) {
  if (!(std::fabs(theta_deg) < 90.0)) throw ParameterError("warp_affine: |theta| must be < 90 degrees");
  const std::size_t c = img.channels(), h = img.height(), w = img.width();
  const double th = theta_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cx = 0.5 * static_cast<double>(w - 1), cy = 0.5 * static_cast<double>(h - 1);
  BasicTensor<T> out = BasicTensor<T>::image(c, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) - cx - dx;
      const double v = static_cast<double>(y) - cy - dy;
      const double sx = cs * u + sn * v + cx;
      const double sy = -sn * u + cs * v + cy;
      for (std::size_t ch = 0; ch < c; ++ch) out.at(ch, y, x) = static_cast<T>(sample_bilinear(img, ch, sx, sy));
    }
  return out;
}

/// Mean over non-overlapping factor x factor blocks.
template <class T>
BasicTensor<T> box_downsample(const BasicTensor<T>& img, std::size_t factor) {
  if (factor == 0) throw ParameterError("box_downsample: factor must be >= 1");
  const std::size_t c = img.channels(), h = img.height(), w = img.width();
  if (h % factor || w % factor) throw ShapeError("box_downsample: dims not divisible by factor");
  const std::size_t oh = h / factor, ow = w / factor;
  BasicTensor<T> out = BasicTensor<T>::image(c, oh, ow);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t j = 0; j < factor; ++j)
          for (std::size_t i = 0; i < factor; ++i) s += img.at(ch, y * factor + j, x * factor + i);
        out.at(ch, y, x) = static_cast<T>(s * inv);
      }
  return out;
}

}  // namespace bdl
