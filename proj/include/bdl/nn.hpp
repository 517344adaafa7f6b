#pragma once

// Layer primitives with hand-derived backward passes. Every layer works on a
// single [C, H, W] sample; batching is done by the caller accumulating
// gradients. Backward functions *accumulate* into parameter gradients.

#include <cmath>
#include <string>

#include "bdl/rng.hpp"
#include "bdl/tensor.hpp"

namespace bdl::nn {

template <class T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  Param() = default;
  Param(std::string n, Dims d) : name(std::move(n)), value(d), grad(d) {}
};

template <class T>
void init_normal(BasicTensor<T>& t, RngStream& rng, double stddev) {
  for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
}

/// k x k convolution, stride 1, zero padding k/2 (k odd).
template <class T>
struct Conv2d {
  std::size_t in = 0, out = 0, k = 3;
  Param<T> weight;  // [out, in, k, k]
  Param<T> bias;    // [out]

  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t ksize)
      : in(in_ch), out(out_ch), k(ksize), weight(name + ".weight", {out_ch, in_ch, ksize, ksize}),
        bias(name + ".bias", {out_ch}) {}

  void init(RngStream& rng, double gain = 1.0) {
    init_normal(weight.value, rng, gain * std::sqrt(2.0 / static_cast<double>(in * k * k)));
    bias.value.fill(T(0));
  }

  BasicTensor<T> forward(const BasicTensor<T>& x) const {
    const std::size_t h = x.height(), w = x.width();
    if (x.channels() != in) throw ShapeError(weight.name + ": input channel mismatch");
    BasicTensor<T> y = BasicTensor<T>::image(out, h, w);
    const long pad = static_cast<long>(k / 2);
    for (std::size_t co = 0; co < out; ++co) {
      T* yo = y.data() + co * h * w;
      std::fill(yo, yo + h * w, bias.value[co]);
      for (std::size_t ci = 0; ci < in; ++ci) {
        const T* xi = x.data() + ci * h * w;
        const T* wk = weight.value.data() + (co * in + ci) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            const long oy = static_cast<long>(ky) - pad, ox = static_cast<long>(kx) - pad;
            const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -ox));
            const std::size_t x1 = static_cast<std::size_t>(std::min(static_cast<long>(w), static_cast<long>(w) - ox));
            for (std::size_t yy = static_cast<std::size_t>(std::max(0L, -oy));
                 yy < static_cast<std::size_t>(std::min(static_cast<long>(h), static_cast<long>(h) - oy)); ++yy) {
              T* yrow = yo + yy * w;
              const T* xrow = xi + (static_cast<long>(yy) + oy) * static_cast<long>(w) + ox;
              for (std::size_t xx = x0; xx < x1; ++xx) yrow[xx] += wv * xrow[xx];
            }
          }
      }
    }
    return y;
  }

  /// Accumulates dW, db; returns dL/dx when `want_dx`.
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& dy, bool want_dx = true) {
    const std::size_t h = x.height(), w = x.width();
    BasicTensor<T> dx;
    if (want_dx) dx = BasicTensor<T>::image(in, h, w);
    const long pad = static_cast<long>(k / 2);
    for (std::size_t co = 0; co < out; ++co) {
      const T* go = dy.data() + co * h * w;
      T db = 0;
      for (std::size_t i = 0; i < h * w; ++i) db += go[i];
      bias.grad[co] += db;
      for (std::size_t ci = 0; ci < in; ++ci) {
        const T* xi = x.data() + ci * h * w;
        T* dxi = want_dx ? dx.data() + ci * h * w : nullptr;
        const T* wk = weight.value.data() + (co * in + ci) * k * k;
        T* gk = weight.grad.data() + (co * in + ci) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            const long oy = static_cast<long>(ky) - pad, ox = static_cast<long>(kx) - pad;
            const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -ox));
            const std::size_t x1 = static_cast<std::size_t>(std::min(static_cast<long>(w), static_cast<long>(w) - ox));
            T acc = 0;
            for (std::size_t yy = static_cast<std::size_t>(std::max(0L, -oy));
                 yy < static_cast<std::size_t>(std::min(static_cast<long>(h), static_cast<long>(h) - oy)); ++yy) {
              const T* grow = go + yy * w;
              const std::ptrdiff_t off = (static_cast<long>(yy) + oy) * static_cast<long>(w) + ox;
              const T* xrow = xi + off;
              for (std::size_t xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
              if (dxi) {
                T* drow = dxi + off;
                for (std::size_t xx = x0; xx < x1; ++xx) drow[xx] += wv * grow[xx];
              }
            }
            gk[ky * k + kx] += acc;
          }
      }
    }
    return dx;
  }

  template <class F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
};

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <class T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (auto& v : y.values()) v = v * sigmoid(v);
  return y;
}

/// dL/dx for y = silu(x).
template <class T>
BasicTensor<T> silu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  BasicTensor<T> dx = dy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid(x[i]);
    dx[i] *= s * (T(1) + x[i] * (T(1) - s));
  }
  return dx;
}

template <class T>
BasicTensor<T> avg_pool2(const BasicTensor<T>& x) {
  const std::size_t c = x.channels(), h = x.height() / 2, w = x.width() / 2;
  BasicTensor<T> y = BasicTensor<T>::image(c, h, w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < h; ++yy)
      for (std::size_t xx = 0; xx < w; ++xx)
        y.at(ch, yy, xx) = T(0.25) * (x.at(ch, 2 * yy, 2 * xx) + x.at(ch, 2 * yy, 2 * xx + 1) +
                                      x.at(ch, 2 * yy + 1, 2 * xx) + x.at(ch, 2 * yy + 1, 2 * xx + 1));
  return y;
}

template <class T>
BasicTensor<T> avg_pool2_backward(const BasicTensor<T>& dy) {
  const std::size_t c = dy.channels(), h = dy.height(), w = dy.width();
  BasicTensor<T> dx = BasicTensor<T>::image(c, 2 * h, 2 * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dx.at(ch, yy, xx) = T(0.25) * dy.at(ch, yy / 2, xx / 2);
  return dx;
}

template <class T>
BasicTensor<T> upsample2(const BasicTensor<T>& x) {
  const std::size_t c = x.channels(), h = x.height(), w = x.width();
  BasicTensor<T> y = BasicTensor<T>::image(c, 2 * h, 2 * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) y.at(ch, yy, xx) = x.at(ch, yy / 2, xx / 2);
  return y;
}

template <class T>
BasicTensor<T> upsample2_backward(const BasicTensor<T>& dy) {
  const std::size_t c = dy.channels(), h = dy.height() / 2, w = dy.width() / 2;
  BasicTensor<T> dx = BasicTensor<T>::image(c, h, w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dx.at(ch, yy / 2, xx / 2) += dy.at(ch, yy, xx);
  return dx;
}

/// Noise-level embedding fed to the network alongside c_in * x.
template <class T>
std::vector<T> noise_embedding(double c_noise) {
  return {static_cast<T>(c_noise), static_cast<T>(std::sin(c_noise)), static_cast<T>(std::cos(c_noise))};
}
inline constexpr std::size_t kNoiseEmbedDim = 3;

/// Per-channel additive bias from the noise embedding: y[c] = x[c] + sum_e A[c, e] emb[e].
template <class T>
struct NoiseBias {
  Param<T> proj;  // [C, E]

  NoiseBias() = default;
  NoiseBias(const std::string& name, std::size_t channels) : proj(name + ".proj", {channels, kNoiseEmbedDim}) {}

  void init(RngStream& rng) { init_normal(proj.value, rng, 0.1); }

  void apply(BasicTensor<T>& x, const std::vector<T>& emb) const {
    const std::size_t c = x.channels(), hw = x.height() * x.width();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T b = 0;
      for (std::size_t e = 0; e < kNoiseEmbedDim; ++e) b += proj.value[ch * kNoiseEmbedDim + e] * emb[e];
      T* p = x.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += b;
    }
  }

  void backward(const BasicTensor<T>& dy, const std::vector<T>& emb) {
    const std::size_t c = dy.channels(), hw = dy.height() * dy.width();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s = 0;
      const T* g = dy.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) s += g[i];
      for (std::size_t e = 0; e < kNoiseEmbedDim; ++e) proj.grad[ch * kNoiseEmbedDim + e] += s * emb[e];
    }
  }

  template <class F>
  void visit(F&& f) {
    f(proj);
  }
};

/// Spatial feature transform: y = gamma * x + beta, elementwise.
template <class T>
BasicTensor<T> sft_modulate(const BasicTensor<T>& feat, const BasicTensor<T>& gamma, const BasicTensor<T>& beta) {
  if (!feat.same_shape(gamma) || !feat.same_shape(beta)) throw ShapeError("sft_modulate: shape mismatch");
  BasicTensor<T> y = feat;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = gamma[i] * feat[i] + beta[i];
  return y;
}

/// SFT conditioning block: gamma = 1 + s * G(cond), beta = s * B(cond) with 1x1 heads G, B.
template <class T>
struct SftBlock {
  Conv2d<T> to_gamma, to_beta;

  SftBlock() = default;
  SftBlock(const std::string& name, std::size_t cond_ch, std::size_t ch)
      : to_gamma(name + ".gamma", cond_ch, ch, 1), to_beta(name + ".beta", cond_ch, ch, 1) {}

  void init(RngStream& rng) {
    to_gamma.init(rng, 0.1);
    to_beta.init(rng, 0.1);
  }

  struct Cache {
    BasicTensor<T> gamma, beta;
  };

  BasicTensor<T> forward(const BasicTensor<T>& x, const BasicTensor<T>& cond, T scale, Cache& cache) const {
    cache.gamma = to_gamma.forward(cond);
    cache.beta = to_beta.forward(cond);
    for (auto& v : cache.gamma.values()) v = T(1) + scale * v;
    cache.beta *= scale;
    return sft_modulate(x, cache.gamma, cache.beta);
  }

  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& cond, T scale, const Cache& cache,
                          const BasicTensor<T>& dy) {
    BasicTensor<T> dx = dy, dg = dy, dbeta = dy;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dx[i] = dy[i] * cache.gamma[i];
      dg[i] = scale * dy[i] * x[i];
      dbeta[i] = scale * dy[i];
    }
    to_gamma.backward(cond, dg, false);
    to_beta.backward(cond, dbeta, false);
    return dx;
  }

  template <class F>
  void visit(F&& f) {
    to_gamma.visit(f);
    to_beta.visit(f);
  }
};

/// Adam with bias correction over a flat list of parameters.
template <class T>
class Adam {
 public:
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Adam() = default;
  explicit Adam(double learning_rate) : lr(learning_rate) {}

  void step(std::vector<Param<T>*>& params) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (auto* p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        m_[k][i] = beta1 * m_[k][i] + (1.0 - beta1) * g;
        v_[k][i] = beta2 * v_[k][i] + (1.0 - beta2) * g * g;
        const double upd = lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - upd);
      }
    }
  }

 private:
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace bdl::nn
