#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "albf/checksum.hpp"
#include "albf/geometry_delay.hpp"
#include "albf/neural/layers.hpp"

namespace albf::nn {

inline constexpr std::size_t kLevels = 3;

struct UNetConfig {
  std::size_t in_channels = 16;
  std::size_t stem_channels = 16;  // post-activation width at full resolution

  /// 128 channels in, 64 after the stem, back to 128.
  static UNetConfig full_scale() { return {128, 64}; }
  static UNetConfig desk_scale() { return {16, 16}; }

  std::size_t width(std::size_t level) const { return stem_channels << level; }

  void validate() const {
    require(in_channels >= 1, ErrorKind::Configuration, "U-Net needs at least one input channel");
    require(stem_channels >= 2 && stem_channels % 2 == 0, ErrorKind::Configuration,
            "stem width must be even (anti-rectifier doubles the filter count)");
  }

  template <typename S>
  std::uint64_t digest() const {
    return Digest()
        .add(std::string("albf-unet"))
        .add(static_cast<std::uint64_t>(in_channels))
        .add(static_cast<std::uint64_t>(stem_channels))
        .add(static_cast<std::uint64_t>(kLevels))
        .add(dtype_code<S>())
        .value();
  }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Double-conv stem, three pool+double-conv levels, three upsample+1x1+skip+double-conv
/// levels, 1x1 output projection without activation.
template <typename S>
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg.validate();
    stem_ = DoubleConv<S>("stem", cfg.in_channels, cfg.width(0));
    for (std::size_t l = 1; l <= kLevels; ++l) {
      down_[l - 1] = DoubleConv<S>("down" + std::to_string(l), cfg.width(l - 1), cfg.width(l));
    }
    for (std::size_t l = kLevels; l >= 1; --l) {
      const std::string n = "up" + std::to_string(l);
      up_proj_[l - 1] = Conv2d<S>(n + ".proj", cfg.width(l), cfg.width(l - 1), 1);
      up_conv_[l - 1] = DoubleConv<S>(n, 2 * cfg.width(l - 1), cfg.width(l - 1));
    }
    head_ = Conv2d<S>("out", cfg.width(0), cfg.in_channels, 1);
    reinitialize(seed);
  }

  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;
  UNet(UNet&&) = delete;
  UNet& operator=(UNet&&) = delete;

  void reinitialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    stem_.init(rng);
    for (auto& d : down_) d.init(rng);
    for (std::size_t l = kLevels; l >= 1; --l) {
      up_proj_[l - 1].init(rng);
      up_conv_[l - 1].init(rng);
    }
    head_.init(rng);
    refresh_registry();
  }

  const UNetConfig& config() const { return cfg_; }

  Tensor4<S> forward(const Tensor4<S>& x, Mode mode) {
    require(x.c == cfg_.in_channels, ErrorKind::ShapeMismatch,
            "U-Net expects " + std::to_string(cfg_.in_channels) + " channels, got " + x.shape_string());
    require(x.h % 8 == 0 && x.w % 8 == 0, ErrorKind::Configuration,
            "U-Net input height and width must be divisible by 8, got " + x.shape_string());
    if (mode == Mode::Train) skip_widths_ = {};
    std::array<Tensor4<S>, kLevels> skips;
    Tensor4<S> h = stem_.forward(x, mode);
    for (std::size_t l = 0; l < kLevels; ++l) {
      skips[l] = std::move(h);
      h = down_[l].forward(pool_[l].forward(skips[l], mode), mode);
    }
    for (std::size_t l = kLevels; l >= 1; --l) {
      auto& skip = skips[l - 1];
      h = up_proj_[l - 1].forward(upsample_nearest2(h), mode);
      if (mode == Mode::Train) skip_widths_[l - 1] = h.c;
      h = concat_channels(h, skip);
      skip = {};
      h = up_conv_[l - 1].forward(h, mode);
    }
    return head_.forward(h, mode);
  }

  /// Accumulates parameter gradients; returns d(loss)/d(input).
  Tensor4<S> backward(const Tensor4<S>& dy) {
    Tensor4<S> g = head_.backward(dy);
    std::array<Tensor4<S>, kLevels> dskip;
    for (std::size_t l = 1; l <= kLevels; ++l) {
      g = up_conv_[l - 1].backward(g);
      auto [dproj, ds] = split_channels(g, skip_widths_[l - 1]);
      dskip[l - 1] = std::move(ds);
      g = upsample_nearest2_backward(up_proj_[l - 1].backward(dproj));
    }
    for (std::size_t l = kLevels; l >= 1; --l) {
      g = pool_[l - 1].backward(down_[l - 1].backward(g));
      add_into(g, dskip[l - 1]);
    }
    return stem_.backward(g);
  }

  /// Drops cached activations.
  void release() {
    stem_.release();
    for (auto& d : down_) d.release();
    for (auto& p : pool_) p.release();
    for (auto& p : up_proj_) p.release();
    for (auto& u : up_conv_) u.release();
    head_.release();
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  const std::vector<Param<S>*>& parameters() { return params_; }
  const std::vector<Buffer<S>>& buffers() { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* p : params_) n += p->value.size();
    return n;
  }

 private:
  void refresh_registry() {
    params_.clear();
    buffers_.clear();
    stem_.collect(params_);
    stem_.collect_buffers(buffers_);
    for (auto& d : down_) {
      d.collect(params_);
      d.collect_buffers(buffers_);
    }
    for (std::size_t l = kLevels; l >= 1; --l) {
      up_proj_[l - 1].collect(params_);
      up_conv_[l - 1].collect(params_);
      up_conv_[l - 1].collect_buffers(buffers_);
    }
    head_.collect(params_);
  }

  UNetConfig cfg_;
  DoubleConv<S> stem_;
  std::array<DoubleConv<S>, kLevels> down_;
  std::array<MaxPool2<S>, kLevels> pool_;
  std::array<Conv2d<S>, kLevels> up_proj_;
  std::array<DoubleConv<S>, kLevels> up_conv_;
  Conv2d<S> head_;
  std::array<std::size_t, kLevels> skip_widths_{};
  std::vector<Param<S>*> params_;
  std::vector<Buffer<S>> buffers_;
};

/// (depth, lateral, channel) cube -> (1, channel, depth, lateral).
template <typename S>
Tensor4<S> to_tensor(const Array3& cube) {
  const std::size_t m = cube.extent(0), n = cube.extent(1), c = cube.extent(2);
  Tensor4<S> t(c, m, n);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t q = 0; q < n; ++q) {
      const auto cell = cube.row(p, q);
      for (std::size_t i = 0; i < c; ++i) t.at(i, p, q) = static_cast<S>(cell[i]);
    }
  return t;
}

template <typename S>
Array3 to_cube(const Tensor4<S>& t) {
  Array3 cube({t.h, t.w, t.c});
  for (std::size_t p = 0; p < t.h; ++p)
    for (std::size_t q = 0; q < t.w; ++q) {
      auto cell = cube.row(p, q);
      for (std::size_t i = 0; i < t.c; ++i) cell[i] = static_cast<double>(t.at(i, p, q));
    }
  return cube;
}

/// Per-pixel per-channel apodization weights, same layout as DelayedTensor::data.
struct ApodWeights {
  Array3 weights;
};

template <typename S>
ApodWeights unet_forward(const DelayedTensor& t, UNet<S>& model, Mode mode = Mode::Eval) {
  require(t.grid.divisible_by(8) && t.depth() % 8 == 0 && t.lateral() % 8 == 0, ErrorKind::Configuration,
          "image grid must be divisible by 8 in both axes");
  auto y = model.forward(to_tensor<S>(t.data), mode);
  if (mode == Mode::Eval) model.release();
  return {to_cube(y)};
}

}  // namespace albf::nn
