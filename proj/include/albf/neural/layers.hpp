#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "albf/neural/tensor.hpp"

namespace albf::nn {

enum class Mode { Train, Eval };

/// Square-kernel convolution with "same" zero padding and stride 1 (kernel 1 or 3).
template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel)
      : in_(in_ch),
        out_(out_ch),
        k_(kernel),
        weight_(name + ".weight", {out_ch, in_ch, kernel, kernel}),
        bias_(name + ".bias", {out_ch}) {
    require(kernel % 2 == 1, ErrorKind::Configuration, "conv kernel must be odd");
  }

  /// He-uniform kernels, zero bias.
  void init(std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_ * k_ * k_));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : weight_.value) v = static_cast<S>(dist(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), S{});
  }

  Tensor4<S> forward(const Tensor4<S>& x, Mode mode) {
    require(x.c == in_, ErrorKind::ShapeMismatch,
            weight_.name + ": expected " + std::to_string(in_) + " input channels, got " + x.shape_string());
    if (mode == Mode::Train) input_ = x;
    const std::size_t H = x.h, W = x.w, pad = k_ / 2;
    Tensor4<S> y(out_, H, W);
    for (std::size_t co = 0; co < out_; ++co) {
      S* dst = y.channel(co);
      std::fill(dst, dst + H * W, bias_.value[co]);
      for (std::size_t ci = 0; ci < in_; ++ci) {
        const S* src = x.channel(ci);
        const S* wk = weight_.value.data() + (co * in_ + ci) * k_ * k_;
        for (std::size_t ky = 0; ky < k_; ++ky) {
          for (std::size_t kx = 0; kx < k_; ++kx) {
            const S wv = wk[ky * k_ + kx];
            const std::size_t x0 = kx < pad ? pad - kx : 0;
            const std::size_t x1 = std::min(W, W + pad - kx);
            for (std::size_t yy = 0; yy < H; ++yy) {
              const long sy = static_cast<long>(yy + ky) - static_cast<long>(pad);
              if (sy < 0 || sy >= static_cast<long>(H)) continue;
              const S* srow = src + static_cast<std::size_t>(sy) * W;
              S* drow = dst + yy * W;
              for (std::size_t xx = x0; xx < x1; ++xx) drow[xx] += wv * srow[xx + kx - pad];
            }
          }
        }
      }
    }
    return y;
  }

  Tensor4<S> backward(const Tensor4<S>& dy) {
    require(!input_.data.empty(), ErrorKind::Contract, weight_.name + ": backward without a training forward");
    const auto& x = input_;
    require_shape(dy, out_, x.h, x.w, "conv backward");
    const std::size_t H = x.h, W = x.w, pad = k_ / 2;
    Tensor4<S> dx(in_, H, W);

    for (std::size_t co = 0; co < out_; ++co) {
      const S* g = dy.channel(co);
      S acc{};
      for (std::size_t k = 0; k < H * W; ++k) acc += g[k];
      bias_.grad[co] += acc;
    }

    for (std::size_t ci = 0; ci < in_; ++ci) {
      const S* src = x.channel(ci);
      S* dsrc = dx.channel(ci);
      for (std::size_t co = 0; co < out_; ++co) {
        const S* g = dy.channel(co);
        const S* wk = weight_.value.data() + (co * in_ + ci) * k_ * k_;
        S* gw = weight_.grad.data() + (co * in_ + ci) * k_ * k_;
        for (std::size_t ky = 0; ky < k_; ++ky) {
          for (std::size_t kx = 0; kx < k_; ++kx) {
            const S wv = wk[ky * k_ + kx];
            const std::size_t x0 = kx < pad ? pad - kx : 0;
            const std::size_t x1 = std::min(W, W + pad - kx);
            S wacc{};
            for (std::size_t yy = 0; yy < H; ++yy) {
              const long sy = static_cast<long>(yy + ky) - static_cast<long>(pad);
              if (sy < 0 || sy >= static_cast<long>(H)) continue;
              const S* srow = src + static_cast<std::size_t>(sy) * W;
              S* dsrow = dsrc + static_cast<std::size_t>(sy) * W;
              const S* grow = g + yy * W;
              for (std::size_t xx = x0; xx < x1; ++xx) {
                wacc += grow[xx] * srow[xx + kx - pad];
                dsrow[xx + kx - pad] += wv * grow[xx];
              }
            }
            gw[ky * k_ + kx] += wacc;
          }
        }
      }
    }
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  void collect_buffers(std::vector<Buffer<S>>&) {}
  void release() { input_ = {}; }

  Param<S>& weight() { return weight_; }
  Param<S>& bias() { return bias_; }
  std::size_t out_channels() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0, k_ = 1;
  Param<S> weight_, bias_;
  Tensor4<S> input_;
};

/// Per-channel batch normalization over the spatial extent (batch is always 1).
template <typename S>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;  // weight on the previous running value

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, std::size_t ch)
      : c_(ch),
        gamma_(name + ".gamma", {ch}, S{1}),
        beta_(name + ".beta", {ch}, S{0}),
        running_mean_(ch, S{0}),
        running_var_(ch, S{1}),
        name_(name) {}

  Tensor4<S> forward(const Tensor4<S>& x, Mode mode) {
    require(x.c == c_, ErrorKind::ShapeMismatch, name_ + ": channel count mismatch, got " + x.shape_string());
    const std::size_t M = x.plane();
    Tensor4<S> y(x.c, x.h, x.w);
    if (mode == Mode::Eval) {
      for (std::size_t ch = 0; ch < c_; ++ch) {
        const S scale = gamma_.value[ch] / static_cast<S>(std::sqrt(static_cast<double>(running_var_[ch]) + kEps));
        const S shift = beta_.value[ch] - scale * running_mean_[ch];
        const S* src = x.channel(ch);
        S* dst = y.channel(ch);
        for (std::size_t k = 0; k < M; ++k) dst[k] = scale * src[k] + shift;
      }
      return y;
    }
    xhat_ = Tensor4<S>(x.c, x.h, x.w);
    inv_std_.assign(c_, S{});
    for (std::size_t ch = 0; ch < c_; ++ch) {
      const S* src = x.channel(ch);
      double mean = 0;
      for (std::size_t k = 0; k < M; ++k) mean += src[k];
      mean /= static_cast<double>(M);
      double var = 0;
      for (std::size_t k = 0; k < M; ++k) {
        const double d = src[k] - mean;
        var += d * d;
      }
      const double unbiased = M > 1 ? var / static_cast<double>(M - 1) : 0.0;
      var /= static_cast<double>(M);
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_[ch] = static_cast<S>(inv);
      S* xh = xhat_.channel(ch);
      S* dst = y.channel(ch);
      for (std::size_t k = 0; k < M; ++k) {
        xh[k] = static_cast<S>((src[k] - mean) * inv);
        dst[k] = gamma_.value[ch] * xh[k] + beta_.value[ch];
      }
      running_mean_[ch] = static_cast<S>(kMomentum * running_mean_[ch] + (1.0 - kMomentum) * mean);
      running_var_[ch] = static_cast<S>(kMomentum * running_var_[ch] + (1.0 - kMomentum) * unbiased);
    }
    return y;
  }

  Tensor4<S> backward(const Tensor4<S>& dy) {
    require(xhat_.same_shape(dy), ErrorKind::Contract, name_ + ": backward without a matching training forward");
    const std::size_t M = dy.plane();
    Tensor4<S> dx(dy.c, dy.h, dy.w);
    for (std::size_t ch = 0; ch < c_; ++ch) {
      const S* g = dy.channel(ch);
      const S* xh = xhat_.channel(ch);
      double sum_g = 0, sum_gx = 0;
      for (std::size_t k = 0; k < M; ++k) {
        sum_g += g[k];
        sum_gx += static_cast<double>(g[k]) * xh[k];
      }
      gamma_.grad[ch] += static_cast<S>(sum_gx);
      beta_.grad[ch] += static_cast<S>(sum_g);
      const double scale = static_cast<double>(gamma_.value[ch]) * inv_std_[ch] / static_cast<double>(M);
      S* d = dx.channel(ch);
      for (std::size_t k = 0; k < M; ++k) {
        d[k] = static_cast<S>(scale * (static_cast<double>(M) * g[k] - sum_g - xh[k] * sum_gx));
      }
    }
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Buffer<S>>& out) {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
  }
  void release() { xhat_ = {}; }

 private:
  std::size_t c_ = 0;
  Param<S> gamma_, beta_;
  std::vector<S> running_mean_, running_var_;
  std::string name_;
  Tensor4<S> xhat_;
  std::vector<S> inv_std_;
};

/// Subtract the cross-channel mean at each position, then emit [ReLU(x), ReLU(-x)]: C -> 2C.
template <typename S>
class AntiRectifier {
 public:
  Tensor4<S> forward(const Tensor4<S>& x, Mode mode) {
    const std::size_t C = x.c, M = x.plane();
    Tensor4<S> centred(C, x.h, x.w);
    std::vector<double> mean(M, 0.0);
    for (std::size_t ch = 0; ch < C; ++ch) {
      const S* src = x.channel(ch);
      for (std::size_t k = 0; k < M; ++k) mean[k] += src[k];
    }
    for (auto& v : mean) v /= static_cast<double>(C);
    Tensor4<S> y(2 * C, x.h, x.w);
    for (std::size_t ch = 0; ch < C; ++ch) {
      const S* src = x.channel(ch);
      S* xc = centred.channel(ch);
      S* pos = y.channel(ch);
      S* neg = y.channel(C + ch);
      for (std::size_t k = 0; k < M; ++k) {
        const S v = static_cast<S>(src[k] - mean[k]);
        xc[k] = v;
        pos[k] = v > 0 ? v : S{0};
        neg[k] = v < 0 ? -v : S{0};
      }
    }
    if (mode == Mode::Train) centred_ = std::move(centred);
    return y;
  }

  Tensor4<S> backward(const Tensor4<S>& dy) {
    const std::size_t C = centred_.c, M = centred_.plane();
    require_shape(dy, 2 * C, centred_.h, centred_.w, "anti-rectifier backward");
    Tensor4<S> g(C, centred_.h, centred_.w);
    std::vector<double> mean(M, 0.0);
    for (std::size_t ch = 0; ch < C; ++ch) {
      const S* xc = centred_.channel(ch);
      const S* gp = dy.channel(ch);
      const S* gn = dy.channel(C + ch);
      S* d = g.channel(ch);
      for (std::size_t k = 0; k < M; ++k) {
        d[k] = xc[k] > 0 ? gp[k] : (xc[k] < 0 ? -gn[k] : S{0});
        mean[k] += d[k];
      }
    }
    for (auto& v : mean) v /= static_cast<double>(C);
    for (std::size_t ch = 0; ch < C; ++ch) {
      S* d = g.channel(ch);
      for (std::size_t k = 0; k < M; ++k) d[k] = static_cast<S>(d[k] - mean[k]);
    }
    return g;
  }

  void release() { centred_ = {}; }

 private:
  Tensor4<S> centred_;
};

template <typename S>
class MaxPool2 {
 public:
  Tensor4<S> forward(const Tensor4<S>& x, Mode mode) {
    require(x.h % 2 == 0 && x.w % 2 == 0, ErrorKind::Configuration, "max-pool needs even spatial size");
    const std::size_t H = x.h / 2, W = x.w / 2;
    Tensor4<S> y(x.c, H, W);
    std::vector<std::uint32_t> arg(y.size());
    for (std::size_t ch = 0; ch < x.c; ++ch) {
      for (std::size_t yy = 0; yy < H; ++yy) {
        for (std::size_t xx = 0; xx < W; ++xx) {
          std::size_t best = (2 * yy) * x.w + 2 * xx;
          const S* src = x.channel(ch);
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (2 * yy + dy) * x.w + 2 * xx + dx;
              if (src[idx] > src[best]) best = idx;
            }
          y.at(ch, yy, xx) = src[best];
          arg[(ch * H + yy) * W + xx] = static_cast<std::uint32_t>(best);
        }
      }
    }
    if (mode == Mode::Train) {
      argmax_ = std::move(arg);
      in_c_ = x.c;
      in_h_ = x.h;
      in_w_ = x.w;
    }
    return y;
  }

  Tensor4<S> backward(const Tensor4<S>& dy) {
    require(dy.size() == argmax_.size(), ErrorKind::Contract, "max-pool backward without training forward");
    Tensor4<S> dx(in_c_, in_h_, in_w_);
    const std::size_t per = dy.plane();
    for (std::size_t ch = 0; ch < dy.c; ++ch) {
      S* d = dx.channel(ch);
      const S* g = dy.channel(ch);
      for (std::size_t k = 0; k < per; ++k) d[argmax_[ch * per + k]] += g[k];
    }
    return dx;
  }

  void release() { argmax_.clear(); }

 private:
  std::vector<std::uint32_t> argmax_;
  std::size_t in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

template <typename S>
Tensor4<S> upsample_nearest2(const Tensor4<S>& x) {
  Tensor4<S> y(x.c, 2 * x.h, 2 * x.w);
  for (std::size_t ch = 0; ch < x.c; ++ch)
    for (std::size_t yy = 0; yy < y.h; ++yy) {
      const S* src = x.channel(ch) + (yy / 2) * x.w;
      S* dst = y.channel(ch) + yy * y.w;
      for (std::size_t xx = 0; xx < y.w; ++xx) dst[xx] = src[xx / 2];
    }
  return y;
}

template <typename S>
Tensor4<S> upsample_nearest2_backward(const Tensor4<S>& dy) {
  Tensor4<S> dx(dy.c, dy.h / 2, dy.w / 2);
  for (std::size_t ch = 0; ch < dy.c; ++ch)
    for (std::size_t yy = 0; yy < dy.h; ++yy) {
      const S* g = dy.channel(ch) + yy * dy.w;
      S* dst = dx.channel(ch) + (yy / 2) * dx.w;
      for (std::size_t xx = 0; xx < dy.w; ++xx) dst[xx / 2] += g[xx];
    }
  return dx;
}

/// 3x3 convolution emitting `filters` channels, batch norm, anti-rectifier (2 x filters out).
template <typename S>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(const std::string& name, std::size_t in_ch, std::size_t filters)
      : conv_(name + ".conv", in_ch, filters, 3), bn_(name + ".bn", filters) {}

  void init(std::mt19937_64& rng) { conv_.init(rng); }

  Tensor4<S> forward(const Tensor4<S>& x, Mode mode) {
    return act_.forward(bn_.forward(conv_.forward(x, mode), mode), mode);
  }
  Tensor4<S> backward(const Tensor4<S>& dy) { return conv_.backward(bn_.backward(act_.backward(dy))); }

  void collect(std::vector<Param<S>*>& out) {
    conv_.collect(out);
    bn_.collect(out);
  }
  void collect_buffers(std::vector<Buffer<S>>& out) { bn_.collect_buffers(out); }
  void release() {
    conv_.release();
    bn_.release();
    act_.release();
  }

 private:
  Conv2d<S> conv_;
  BatchNorm2d<S> bn_;
  AntiRectifier<S> act_;
};

/// Two ConvBnAct blocks; out_ch is the post-activation width (must be even).
template <typename S>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(const std::string& name, std::size_t in_ch, std::size_t out_ch)
      : a_(name + ".c1", in_ch, out_ch / 2), b_(name + ".c2", out_ch, out_ch / 2) {
    require(out_ch % 2 == 0, ErrorKind::Configuration, "anti-rectifier widths must be even");
  }

  void init(std::mt19937_64& rng) {
    a_.init(rng);
    b_.init(rng);
  }
  Tensor4<S> forward(const Tensor4<S>& x, Mode mode) { return b_.forward(a_.forward(x, mode), mode); }
  Tensor4<S> backward(const Tensor4<S>& dy) { return a_.backward(b_.backward(dy)); }

  void collect(std::vector<Param<S>*>& out) {
    a_.collect(out);
    b_.collect(out);
  }
  void collect_buffers(std::vector<Buffer<S>>& out) {
    a_.collect_buffers(out);
    b_.collect_buffers(out);
  }
  void release() {
    a_.release();
    b_.release();
  }

 private:
  ConvBnAct<S> a_, b_;
};

}  // namespace albf::nn
