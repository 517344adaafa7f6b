#pragma once

// D(x; sigma, cond) -> x0 estimate: the common interface, closed-form
// posterior-mean oracles, EDM preconditioning, burst conditioning features and
// the trainable networks (convolutional for images, MLP for point-cloud toys).

#include <array>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "bdl/baseline.hpp"
#include "bdl/io.hpp"
#include "bdl/nn.hpp"

namespace bdl {

using nn::sft_modulate;

// ---------------------------------------------------------------- conditioning

/// Burst features at HR, HR/2 and HR/4 resolution (index = scale level).
template <class T>
struct BasicConditioning {
  std::array<BasicTensor<T>, 3> scales;

  template <class U>
  BasicConditioning<U> cast() const {
    return {{scales[0].template cast<U>(), scales[1].template cast<U>(), scales[2].template cast<U>()}};
  }
};
using ConditioningFeatures = BasicConditioning<float>;

inline constexpr std::size_t kCondChannels = 8;

/// Fused burst statistics lifted to three scales. Channels: weighted mean RGB,
/// per-pixel spread RGB, horizontal and vertical luminance gradient.
inline ConditioningFeatures encode_burst(const BurstStack& stack, const AlignmentEstimate& align, int scale_factor) {
  if (scale_factor != 2 && scale_factor != 4 && scale_factor != 8)
    throw ParameterError("encode_burst: scale_factor must be 2, 4 or 8");
  const FusedBurst fused = fuse_aligned(stack, align);
  const std::size_t h = fused.mean.height(), w = fused.mean.width();

  Tensor base = Tensor::image(kCondChannels, h, w);
  std::vector<double> lum(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        base.at(c, y, x) = fused.mean.at(c, y, x);
        base.at(3 + c, y, x) = fused.std.at(c, y, x);
      }
      lum[y * w + x] =
          0.25 * (fused.mean.at(0, y, x) + 2.0 * static_cast<double>(fused.mean.at(1, y, x)) + fused.mean.at(2, y, x));
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xl = x ? x - 1 : 0, xr = std::min(x + 1, w - 1);
      const std::size_t yu = y ? y - 1 : 0, yd = std::min(y + 1, h - 1);
      base.at(6, y, x) = static_cast<float>(0.5 * (lum[y * w + xr] - lum[y * w + xl]));
      base.at(7, y, x) = static_cast<float>(0.5 * (lum[yd * w + x] - lum[yu * w + x]));
    }

  const double sf = static_cast<double>(scale_factor);
  return {{resize_bicubic(base, sf), resize_bicubic(base, sf / 2.0), resize_bicubic(base, sf / 4.0)}};
}

// --------------------------------------------------------------- preconditioning

struct EdmPrecond {
  double c_skip, c_out, c_in, c_noise;
};

inline EdmPrecond edm_preconditioning(double sigma, double sigma_data) {
  const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
  return {d2 / (s2 + d2), sigma * sigma_data / std::sqrt(s2 + d2), 1.0 / std::sqrt(s2 + d2),
          sigma > 0.0 ? 0.25 * std::log(sigma) : -std::numeric_limits<double>::infinity()};
}

/// D = c_skip(sigma) x + c_out(sigma) F.
template <class T>
BasicTensor<T> edm_precondition(const BasicTensor<T>& x, double sigma, const BasicTensor<T>& raw_net_output,
                                double sigma_data) {
  if (!(sigma >= 0.0)) throw ParameterError("edm_precondition: sigma must be >= 0");
  if (!x.same_shape(raw_net_output)) throw ShapeError("edm_precondition: shape mismatch");
  const auto pc = edm_preconditioning(sigma, sigma_data);
  BasicTensor<T> d = x;
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = static_cast<T>(pc.c_skip * static_cast<double>(x[i]) + pc.c_out * static_cast<double>(raw_net_output[i]));
  return d;
}

// --------------------------------------------------------------------- interface

class DenoiserInterface {
 public:
  virtual ~DenoiserInterface() = default;
  /// Estimate of the clean signal; output has the shape of x.
  virtual Tensor evaluate(const Tensor& x, double sigma, const ConditioningFeatures* cond) const = 0;
};

/// Exact posterior mean for an isotropic Gaussian prior N(mean, s^2 I).
/// `mean` is either a scalar tensor (broadcast) or has the shape of x.
class GaussianPriorOracle final : public DenoiserInterface {
 public:
  GaussianPriorOracle(Tensor mean, double variance) : mean_(std::move(mean)), variance_(variance) {
    if (!(variance_ >= 0.0)) throw ParameterError("GaussianPriorOracle: variance must be >= 0");
  }
  static GaussianPriorOracle scalar(double mean, double variance) {
    return GaussianPriorOracle(Tensor({1}, static_cast<float>(mean)), variance);
  }

  double variance() const noexcept { return variance_; }

  Tensor evaluate(const Tensor& x, double sigma, const ConditioningFeatures*) const override {
    const bool broadcast = mean_.size() == 1;
    if (!broadcast && !mean_.same_shape(x)) throw ShapeError("GaussianPriorOracle: mean/x shape mismatch");
    const double s2 = sigma * sigma;
    // point mass at sigma = 0 is the identity
    const double gain = (variance_ + s2) > 0.0 ? variance_ / (variance_ + s2) : 1.0;
    Tensor out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double m = mean_[broadcast ? 0 : i];
      out[i] = static_cast<float>(m + gain * (static_cast<double>(x[i]) - m));
    }
    return out;
  }

 private:
  Tensor mean_;
  double variance_;
};

/// Exact posterior mean for a mixture of isotropic Gaussians. x is [N, d]
/// (one point per row, d = component dimension).
class GmmOracle final : public DenoiserInterface {
 public:
  struct Component {
    double weight;
    std::vector<double> mean;
    double stddev;
  };

  explicit GmmOracle(std::vector<Component> comps) : comps_(std::move(comps)) {
    if (comps_.empty()) throw ParameterError("GmmOracle: no components");
    for (const auto& c : comps_)
      if (c.mean.size() != comps_[0].mean.size() || !(c.weight > 0.0) || !(c.stddev >= 0.0))
        throw ParameterError("GmmOracle: inconsistent component");
  }

  const std::vector<Component>& components() const noexcept { return comps_; }
  std::size_t dim() const noexcept { return comps_[0].mean.size(); }

  Tensor evaluate(const Tensor& x, double sigma, const ConditioningFeatures*) const override {
    const std::size_t d = dim();
    if (x.rank() != 2 || x.dim(1) != d) throw ShapeError("GmmOracle: expected [N, d] points");
    const double s2 = sigma * sigma;
    Tensor out = x;
    std::vector<double> logr(comps_.size());
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      const float* p = x.data() + n * d;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < comps_.size(); ++k) {
        const double v = comps_[k].stddev * comps_[k].stddev + s2;
        double r2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) r2 += (p[j] - comps_[k].mean[j]) * (p[j] - comps_[k].mean[j]);
        logr[k] = std::log(comps_[k].weight) - 0.5 * r2 / v - 0.5 * static_cast<double>(d) * std::log(v);
        mx = std::max(mx, logr[k]);
      }
      double z = 0.0;
      for (auto& l : logr) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < comps_.size(); ++k) {
          const double vk = comps_[k].stddev * comps_[k].stddev;
          const double gain = (vk + s2) > 0.0 ? vk / (vk + s2) : 1.0;
          acc += logr[k] / z * (comps_[k].mean[j] + gain * (p[j] - comps_[k].mean[j]));
        }
        out[n * d + j] = static_cast<float>(acc);
      }
    }
    return out;
  }

 private:
  std::vector<Component> comps_;
};

// ----------------------------------------------------------------- tiny U-Net

/// Three-level convolutional encoder-decoder (16/32/64 channels, 3x3 kernels,
/// additive skips) under EDM preconditioning. Burst features enter through an
/// SFT block at every decoder scale. Input H and W must be multiples of 4.
template <class T>
class TinyDenoiser {
 public:
  using Cond = BasicConditioning<T>;

  struct Options {
    std::size_t image_channels = 3;
    std::size_t c0 = 16, c1 = 32, c2 = 64;
    double sigma_data = 0.5;
  };

  explicit TinyDenoiser(Options opt = {}, std::uint64_t seed = 0) : opt_(opt) {
    const std::size_t ic = opt.image_channels, cc = kCondChannels;
    e0a_ = {"enc0.conv_a", ic, opt.c0, 3};
    e0b_ = {"enc0.conv_b", opt.c0, opt.c0, 3};
    e1a_ = {"enc1.conv_a", opt.c0, opt.c1, 3};
    e1b_ = {"enc1.conv_b", opt.c1, opt.c1, 3};
    ma_ = {"mid.conv_a", opt.c1, opt.c2, 3};
    mb_ = {"mid.conv_b", opt.c2, opt.c2, 3};
    d1p_ = {"dec1.proj", opt.c2, opt.c1, 1};
    d1b_ = {"dec1.conv", opt.c1, opt.c1, 3};
    d0p_ = {"dec0.proj", opt.c1, opt.c0, 1};
    d0b_ = {"dec0.conv", opt.c0, opt.c0, 3};
    out_ = {"out.conv", opt.c0, ic, 3};
    nb0_ = {"enc0.noise", opt.c0};
    nb1_ = {"enc1.noise", opt.c1};
    nb2_ = {"mid.noise", opt.c2};
    sft0_ = {"dec0.sft", cc, opt.c0};
    sft1_ = {"dec1.sft", cc, opt.c1};
    sft2_ = {"mid.sft", cc, opt.c2};

    RngStream rng(seed, 0x7e57);
    for (auto* c : {&e0a_, &e0b_, &e1a_, &e1b_, &ma_, &mb_, &d1p_, &d1b_, &d0p_, &d0b_}) c->init(rng);
    out_.init(rng, 0.1);
    for (auto* n : {&nb0_, &nb1_, &nb2_}) n->init(rng);
    for (auto* s : {&sft0_, &sft1_, &sft2_}) s->init(rng);
  }

  const Options& options() const noexcept { return opt_; }
  double sigma_data() const noexcept { return opt_.sigma_data; }
  static constexpr const char* kArch = "tiny_unet";

  /// Multiplies the SFT modulation strength at inference and training time.
  T cond_scale = T(1);

  struct Cache {
    double sigma = 0.0;
    EdmPrecond pc{};
    bool identity = false;
    const Cond* cond = nullptr;
    std::vector<T> emb;
    BasicTensor<T> xin, z1, h1, z2, h2, p1, z3, h3, z4, h4, p2, z5, h5, z6, q6, h6, u1, z7, q7, h7, z8, h8, u0, z9,
        q9, h9, z10, h10;
    typename nn::SftBlock<T>::Cache s0, s1, s2;
  };

  BasicTensor<T> forward(const BasicTensor<T>& x, double sigma, const Cond* cond, Cache& c) const {
    if (x.rank() != 3 || x.channels() != opt_.image_channels || x.height() % 4 || x.width() % 4)
      throw ShapeError("TinyDenoiser: expected [C,H,W] with H, W multiples of 4");
    if (!(sigma >= 0.0)) throw ParameterError("TinyDenoiser: sigma must be >= 0");
    c.sigma = sigma;
    c.cond = cond;
    c.identity = sigma == 0.0;
    if (c.identity) return x;
    if (cond) check_cond(x, *cond);
    c.pc = edm_preconditioning(sigma, opt_.sigma_data);
    c.emb = nn::noise_embedding<T>(c.pc.c_noise);

    c.xin = x * static_cast<T>(c.pc.c_in);
    c.z1 = e0a_.forward(c.xin);
    nb0_.apply(c.z1, c.emb);
    c.h1 = nn::silu(c.z1);
    c.z2 = e0b_.forward(c.h1);
    c.h2 = nn::silu(c.z2);
    c.p1 = nn::avg_pool2(c.h2);
    c.z3 = e1a_.forward(c.p1);
    nb1_.apply(c.z3, c.emb);
    c.h3 = nn::silu(c.z3);
    c.z4 = e1b_.forward(c.h3);
    c.h4 = nn::silu(c.z4);
    c.p2 = nn::avg_pool2(c.h4);
    c.z5 = ma_.forward(c.p2);
    nb2_.apply(c.z5, c.emb);
    c.h5 = nn::silu(c.z5);
    c.z6 = mb_.forward(c.h5);
    c.q6 = cond ? sft2_.forward(c.z6, cond->scales[2], cond_scale, c.s2) : c.z6;
    c.h6 = nn::silu(c.q6);
    c.u1 = nn::upsample2(c.h6);
    c.z7 = d1p_.forward(c.u1);
    c.z7 += c.h4;
    c.q7 = cond ? sft1_.forward(c.z7, cond->scales[1], cond_scale, c.s1) : c.z7;
    c.h7 = nn::silu(c.q7);
    c.z8 = d1b_.forward(c.h7);
    c.h8 = nn::silu(c.z8);
    c.u0 = nn::upsample2(c.h8);
    c.z9 = d0p_.forward(c.u0);
    c.z9 += c.h2;
    c.q9 = cond ? sft0_.forward(c.z9, cond->scales[0], cond_scale, c.s0) : c.z9;
    c.h9 = nn::silu(c.q9);
    c.z10 = d0b_.forward(c.h9);
    c.h10 = nn::silu(c.z10);
    return edm_precondition(x, sigma, out_.forward(c.h10), opt_.sigma_data);
  }

  /// Accumulates parameter gradients given dL/dD.
  void backward(const Cache& c, const BasicTensor<T>& dD) {
    if (c.identity) return;
    const T s = cond_scale;
    BasicTensor<T> g = dD * static_cast<T>(c.pc.c_out);
    g = out_.backward(c.h10, g);
    g = d0b_.backward(c.h9, nn::silu_backward(c.z10, g));
    g = nn::silu_backward(c.q9, g);
    if (c.cond) g = sft0_.backward(c.z9, c.cond->scales[0], s, c.s0, g);
    BasicTensor<T> skip0 = g;
    g = nn::upsample2_backward(d0p_.backward(c.u0, g));
    g = d1b_.backward(c.h7, nn::silu_backward(c.z8, g));
    g = nn::silu_backward(c.q7, g);
    if (c.cond) g = sft1_.backward(c.z7, c.cond->scales[1], s, c.s1, g);
    BasicTensor<T> skip1 = g;
    g = nn::upsample2_backward(d1p_.backward(c.u1, g));
    g = nn::silu_backward(c.q6, g);
    if (c.cond) g = sft2_.backward(c.z6, c.cond->scales[2], s, c.s2, g);
    g = mb_.backward(c.h5, g);
    g = nn::silu_backward(c.z5, g);
    nb2_.backward(g, c.emb);
    g = nn::avg_pool2_backward(ma_.backward(c.p2, g));
    g += skip1;
    g = e1b_.backward(c.h3, nn::silu_backward(c.z4, g));
    g = nn::silu_backward(c.z3, g);
    nb1_.backward(g, c.emb);
    g = nn::avg_pool2_backward(e1a_.backward(c.p1, g));
    g += skip0;
    g = e0b_.backward(c.h1, nn::silu_backward(c.z2, g));
    g = nn::silu_backward(c.z1, g);
    nb0_.backward(g, c.emb);
    e0a_.backward(c.xin, g, false);
  }

  BasicTensor<T> predict(const BasicTensor<T>& x, double sigma, const Cond* cond) const {
    Cache c;
    return forward(x, sigma, cond, c);
  }

  template <class F>
  void visit_params(F&& f) {
    for (auto* cv : {&e0a_, &e0b_, &e1a_, &e1b_, &ma_, &mb_, &d1p_, &d1b_, &d0p_, &d0b_, &out_}) cv->visit(f);
    for (auto* n : {&nb0_, &nb1_, &nb2_}) n->visit(f);
    for (auto* sb : {&sft0_, &sft1_, &sft2_}) sb->visit(f);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    visit_params([&](nn::Param<T>& p) { out.push_back(&p); });
    return out;
  }

  void zero_grad() {
    visit_params([](nn::Param<T>& p) { p.grad.fill(T(0)); });
  }

  std::string arch_string() const {
    std::ostringstream os;
    os << kArch << " image_channels=" << opt_.image_channels << " c0=" << opt_.c0 << " c1=" << opt_.c1
       << " c2=" << opt_.c2;
    return os.str();
  }

  /// Same architecture, parameters converted to scalar type U.
  template <class U>
  TinyDenoiser<U> converted() const {
    TinyDenoiser<U> out(typename TinyDenoiser<U>::Options{opt_.image_channels, opt_.c0, opt_.c1, opt_.c2,
                                                          opt_.sigma_data});
    auto src = const_cast<TinyDenoiser*>(this)->params();
    auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    out.cond_scale = static_cast<U>(cond_scale);
    return out;
  }

 private:
  void check_cond(const BasicTensor<T>& x, const Cond& cond) const {
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& f = cond.scales[k];
      if (f.rank() != 3 || f.channels() != kCondChannels || f.height() != x.height() >> k ||
          f.width() != x.width() >> k)
        throw ShapeError("TinyDenoiser: conditioning scale " + std::to_string(k) + " has wrong shape");
    }
  }

  Options opt_;
  nn::Conv2d<T> e0a_, e0b_, e1a_, e1b_, ma_, mb_, d1p_, d1b_, d0p_, d0b_, out_;
  nn::NoiseBias<T> nb0_, nb1_, nb2_;
  nn::SftBlock<T> sft0_, sft1_, sft2_;
};

// ------------------------------------------------------------- point-cloud MLP

/// Two-hidden-layer SiLU MLP denoiser for [N, d] point sets under EDM
/// preconditioning. Used for the low-dimensional distillation toys.
template <class T>
class ToyMlpDenoiser {
 public:
  using Cond = BasicConditioning<T>;

  struct Options {
    std::size_t dim = 2;
    std::size_t hidden = 64;
    double sigma_data = 1.0;
  };

  explicit ToyMlpDenoiser(Options opt = {}, std::uint64_t seed = 0) : opt_(opt) {
    const std::size_t in = opt.dim + nn::kNoiseEmbedDim, h = opt.hidden;
    w1_ = {"fc1.weight", {h, in}};
    b1_ = {"fc1.bias", {h}};
    w2_ = {"fc2.weight", {h, h}};
    b2_ = {"fc2.bias", {h}};
    w3_ = {"fc3.weight", {opt.dim, h}};
    b3_ = {"fc3.bias", {opt.dim}};
    RngStream rng(seed, 0x3117);
    nn::init_normal(w1_.value, rng, std::sqrt(2.0 / static_cast<double>(in)));
    nn::init_normal(w2_.value, rng, std::sqrt(2.0 / static_cast<double>(h)));
    nn::init_normal(w3_.value, rng, 0.1 * std::sqrt(1.0 / static_cast<double>(h)));
  }

  double sigma_data() const noexcept { return opt_.sigma_data; }
  const Options& options() const noexcept { return opt_; }
  static constexpr const char* kArch = "toy_mlp";
  T cond_scale = T(1);  // unused; keeps the interface uniform

  struct Cache {
    double sigma = 0.0;
    EdmPrecond pc{};
    bool identity = false;
    std::size_t n = 0;
    std::vector<T> in, pre1, h1, pre2, h2;
  };

  BasicTensor<T> forward(const BasicTensor<T>& x, double sigma, const Cond*, Cache& c) const {
    const std::size_t d = opt_.dim, H = opt_.hidden, I = d + nn::kNoiseEmbedDim;
    if (x.rank() != 2 || x.dim(1) != d) throw ShapeError("ToyMlpDenoiser: expected [N, d] points");
    if (!(sigma >= 0.0)) throw ParameterError("ToyMlpDenoiser: sigma must be >= 0");
    c.sigma = sigma;
    c.identity = sigma == 0.0;
    if (c.identity) return x;
    c.pc = edm_preconditioning(sigma, opt_.sigma_data);
    const auto emb = nn::noise_embedding<T>(c.pc.c_noise);
    const std::size_t n = x.dim(0);
    c.n = n;
    c.in.assign(n * I, T(0));
    c.pre1.assign(n * H, T(0));
    c.pre2.assign(n * H, T(0));
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < d; ++j) c.in[r * I + j] = static_cast<T>(c.pc.c_in) * x[r * d + j];
      for (std::size_t e = 0; e < nn::kNoiseEmbedDim; ++e) c.in[r * I + d + e] = emb[e];
    }
    affine(c.in, I, w1_, b1_, c.pre1, n);
    c.h1 = activate(c.pre1);
    affine(c.h1, H, w2_, b2_, c.pre2, n);
    c.h2 = activate(c.pre2);
    std::vector<T> f(n * d);
    affine(c.h2, H, w3_, b3_, f, n);
    return edm_precondition(x, sigma, BasicTensor<T>(x.dims(), std::move(f)), opt_.sigma_data);
  }

  void backward(const Cache& c, const BasicTensor<T>& dD) {
    if (c.identity) return;
    const std::size_t d = opt_.dim, H = opt_.hidden, I = d + nn::kNoiseEmbedDim, n = c.n;
    std::vector<T> df(n * d);
    for (std::size_t i = 0; i < df.size(); ++i) df[i] = static_cast<T>(c.pc.c_out) * dD[i];
    auto dh2 = affine_backward(c.h2, H, w3_, b3_, df, n);
    auto dpre2 = activate_backward(c.pre2, dh2);
    auto dh1 = affine_backward(c.h1, H, w2_, b2_, dpre2, n);
    auto dpre1 = activate_backward(c.pre1, dh1);
    affine_backward(c.in, I, w1_, b1_, dpre1, n);
  }

  BasicTensor<T> predict(const BasicTensor<T>& x, double sigma, const Cond* cond) const {
    Cache c;
    return forward(x, sigma, cond, c);
  }

  template <class F>
  void visit_params(F&& f) {
    for (auto* p : {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}) f(*p);
  }
  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    visit_params([&](nn::Param<T>& p) { out.push_back(&p); });
    return out;
  }
  void zero_grad() {
    visit_params([](nn::Param<T>& p) { p.grad.fill(T(0)); });
  }
  std::string arch_string() const {
    std::ostringstream os;
    os << kArch << " dim=" << opt_.dim << " hidden=" << opt_.hidden;
    return os.str();
  }

 private:
  // out[r, o] = b[o] + sum_i W[o, i] in[r, i]
  static void affine(const std::vector<T>& in, std::size_t I, const nn::Param<T>& w, const nn::Param<T>& b,
                     std::vector<T>& out, std::size_t n) {
    const std::size_t O = b.value.size();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t o = 0; o < O; ++o) {
        T s = b.value[o];
        const T* wr = w.value.data() + o * I;
        const T* xr = in.data() + r * I;
        for (std::size_t i = 0; i < I; ++i) s += wr[i] * xr[i];
        out[r * O + o] = s;
      }
  }
  static std::vector<T> affine_backward(const std::vector<T>& in, std::size_t I, nn::Param<T>& w, nn::Param<T>& b,
                                        const std::vector<T>& dout, std::size_t n) {
    const std::size_t O = b.value.size();
    std::vector<T> din(n * I, T(0));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t o = 0; o < O; ++o) {
        const T g = dout[r * O + o];
        b.grad[o] += g;
        T* gw = w.grad.data() + o * I;
        const T* wr = w.value.data() + o * I;
        const T* xr = in.data() + r * I;
        T* dr = din.data() + r * I;
        for (std::size_t i = 0; i < I; ++i) {
          gw[i] += g * xr[i];
          dr[i] += g * wr[i];
        }
      }
    return din;
  }
  static std::vector<T> activate(const std::vector<T>& pre) {
    std::vector<T> h(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) h[i] = pre[i] * nn::sigmoid(pre[i]);
    return h;
  }
  static std::vector<T> activate_backward(const std::vector<T>& pre, const std::vector<T>& dh) {
    std::vector<T> d(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      const T s = nn::sigmoid(pre[i]);
      d[i] = dh[i] * s * (T(1) + pre[i] * (T(1) - s));
    }
    return d;
  }

  Options opt_;
  nn::Param<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

/// Adapts a float model to the sampler-facing interface (holds a reference).
template <class M>
class ModelDenoiser final : public DenoiserInterface {
 public:
  explicit ModelDenoiser(const M& model) : model_(&model) {}
  Tensor evaluate(const Tensor& x, double sigma, const ConditioningFeatures* cond) const override {
    return model_->predict(x, sigma, cond);
  }

 private:
  const M* model_;
};

// ------------------------------------------------------------------ checkpoints

/// Directory with `manifest.txt` (arch line, sigma_data, one `param <name> <file>`
/// line per tensor) and one BTSR file per parameter.
template <class M>
void save_checkpoint(const std::filesystem::path& dir, M& model) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / "manifest.txt");
  if (!man) throw IoError("cannot write checkpoint manifest in " + dir.string());
  man << "# bdl checkpoint v1\n";
  man << "arch " << model.arch_string() << '\n';
  man.precision(17);
  man << "sigma_data " << model.sigma_data() << '\n';
  std::size_t idx = 0;
  model.visit_params([&](auto& p) {
    const std::string file = "p" + std::to_string(idx++) + ".btsr";
    save_btsr(dir / file, p.value.template cast<float>());
    man << "param " << p.name << ' ' << file << ' ' << dims_to_string(p.value.dims()) << '\n';
  });
}

template <class M>
void load_checkpoint(const std::filesystem::path& dir, M& model) {
  std::ifstream man(dir / "manifest.txt");
  if (!man) throw ConfigError("checkpoint not found: " + (dir / "manifest.txt").string());
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line, arch;
  while (std::getline(man, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "arch") {
      std::getline(is >> std::ws, arch);
    } else if (key == "param") {
      std::string name, file;
      is >> name >> file;
      entries.emplace_back(name, file);
    }
  }
  if (arch != model.arch_string())
    throw ConfigError("checkpoint architecture '" + arch + "' does not match '" + model.arch_string() + "'");
  auto params = model.params();
  if (params.size() != entries.size()) throw ConfigError("checkpoint parameter count mismatch in " + dir.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != entries[i].first)
      throw ConfigError("checkpoint parameter '" + entries[i].first + "' where '" + params[i]->name + "' expected");
    Tensor t = load_btsr(dir / entries[i].second);
    if (t.dims() != params[i]->value.dims()) throw ConfigError("checkpoint tensor shape mismatch for " + entries[i].first);
    params[i]->value = t.template cast<typename std::remove_reference_t<decltype(params[i]->value)>::value_type>();
  }
}

}  // namespace bdl
