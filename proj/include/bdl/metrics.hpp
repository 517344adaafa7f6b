#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include "bdl/rng.hpp"
#include "bdl/tensor.hpp"

namespace bdl {

/// PSNR in dB; std::nullopt is the "identical" sentinel (MSE == 0).
inline std::optional<double> psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  if (!a.same_shape(b)) throw ShapeError("psnr: shape mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::nullopt;
  return 10.0 * std::log10(peak * peak / mse);
}

/// Finite PSNR for aggregation; the identical case maps to `cap`.
inline double psnr_or(const Tensor& a, const Tensor& b, double cap = 100.0) { return psnr(a, b).value_or(cap); }

namespace detail {

inline std::vector<double> gaussian_window_1d(int size, double sigma) {
  std::vector<double> g(size);
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    g[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// "valid" separable filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
  const std::size_t k = g.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * img[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace detail

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean SSIM with a Gaussian window over "valid" positions, averaged over channels.
/// Accepts [H, W] or [C, H, W].
inline double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {}) {
  if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
  if (a.rank() != 2 && a.rank() != 3) throw ShapeError("ssim: expected [H,W] or [C,H,W]");
  const std::size_t c = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  const auto k = static_cast<std::size_t>(opt.window);
  if (h < k || w < k) throw ShapeError("ssim: image smaller than the window");
  const auto g = detail::gaussian_window_1d(opt.window, opt.sigma);
  const double c1 = std::pow(opt.k1 * opt.data_range, 2), c2 = std::pow(opt.k2 * opt.data_range, 2);

  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      x[i] = a[ch * h * w + i];
      y[i] = b[ch * h * w + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
    const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g);
    const auto sxy = detail::filter_valid(xy, h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(c);
}

/// Point sets in R^2 stored as [N, 2].
struct W2Result {
  double distance = 0.0;
  bool exact = true;  // false: sliced estimate
};

/// Minimum-cost perfect matching on a dense n x n cost matrix (Hungarian /
/// Kuhn-Munkres with potentials). Returns assignment row -> column.
inline std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      const double* row = cost.data() + (i0 - 1) * n;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

inline double sliced_w2_2d(const Tensor& a, const Tensor& b, std::size_t projections, std::uint64_t seed) {
  const std::size_t n = a.dim(0);
  RngStream rng(seed, 0x51ced);
  double acc = 0.0;
  std::vector<double> pa(n), pb(n);
  for (std::size_t k = 0; k < projections; ++k) {
    const double ang = rng.uniform(0.0, std::numbers::pi);
    const double cx = std::cos(ang), cy = std::sin(ang);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = cx * a[2 * i] + cy * a[2 * i + 1];
      pb[i] = cx * b[2 * i] + cy * b[2 * i + 1];
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    acc += s / static_cast<double>(n);
  }
  return std::sqrt(acc / static_cast<double>(projections));
}

/// W2 between equal-size 2-D sample sets: exact assignment for n <= 4096,
/// sliced W2 with 64 projections above that.
inline W2Result wasserstein2_2d(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(1) != 2 || !a.same_shape(b))
    throw ShapeError("wasserstein2_2d: expected two [N,2] tensors of equal N");
  const std::size_t n = a.dim(0);
  if (n > 4096) return {sliced_w2_2d(a, b, 64, 0x5eed), false};
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = static_cast<double>(a[2 * i]) - b[2 * j];
      const double dy = static_cast<double>(a[2 * i + 1]) - b[2 * j + 1];
      cost[i * n + j] = dx * dx + dy * dy;
    }
  const auto assign = hungarian(cost, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + assign[i]];
  return {std::sqrt(std::max(0.0, total) / static_cast<double>(n)), true};
}

struct ImageScore {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> images;
  std::optional<W2Result> w2;

  double mean_psnr() const {
    double s = 0.0;
    for (const auto& i : images) s += i.psnr_db;
    return images.empty() ? 0.0 : s / static_cast<double>(images.size());
  }
  double mean_ssim() const {
    double s = 0.0;
    for (const auto& i : images) s += i.ssim;
    return images.empty() ? 0.0 : s / static_cast<double>(images.size());
  }
  static double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = 0.0;
    for (auto x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (auto x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  double std_psnr() const {
    std::vector<double> v;
    for (const auto& i : images) v.push_back(i.psnr_db);
    return stddev(v);
  }
  double std_ssim() const {
    std::vector<double> v;
    for (const auto& i : images) v.push_back(i.ssim);
    return stddev(v);
  }

  /// `image_id,psnr_db,ssim` rows followed by mean/std footer rows. A
  /// non-empty hash is prepended to every row as a `config_hash` column.
  void write_csv(std::ostream& os, const std::string& hash = {}) const {
    const std::string pre = hash.empty() ? "" : hash + ",";
    os << (hash.empty() ? "" : "config_hash,") << "image_id,psnr_db,ssim\n";
    os.precision(10);
    for (const auto& i : images) os << pre << i.id << ',' << i.psnr_db << ',' << i.ssim << '\n';
    os << pre << "mean," << mean_psnr() << ',' << mean_ssim() << '\n';
    os << pre << "std," << std_psnr() << ',' << std_ssim() << '\n';
  }
};

}  // namespace bdl
