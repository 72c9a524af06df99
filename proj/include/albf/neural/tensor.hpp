#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "albf/error.hpp"

namespace albf::nn {

/// Batch-of-one NCHW tensor. Batch size is fixed at 1 throughout the engine.
template <typename S>
struct Tensor4 {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<S> data;

  Tensor4() = default;
  Tensor4(std::size_t channels, std::size_t height, std::size_t width, S fill = S{})
      : c(channels), h(height), w(width), data(channels * height * width, fill) {}

  static constexpr std::size_t batch() { return 1; }
  std::size_t plane() const { return h * w; }
  std::size_t size() const { return data.size(); }

  S& at(std::size_t ch, std::size_t y, std::size_t x) { return data[(ch * h + y) * w + x]; }
  const S& at(std::size_t ch, std::size_t y, std::size_t x) const { return data[(ch * h + y) * w + x]; }

  S* channel(std::size_t ch) { return data.data() + ch * plane(); }
  const S* channel(std::size_t ch) const { return data.data() + ch * plane(); }

  bool same_shape(const Tensor4& o) const { return c == o.c && h == o.h && w == o.w; }

  std::string shape_string() const {
    return "(1, " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;
};

template <typename S>
void require_shape(const Tensor4<S>& t, std::size_t c, std::size_t h, std::size_t w, const char* what) {
  require(t.c == c && t.h == h && t.w == w, ErrorKind::ShapeMismatch,
          std::string(what) + ": expected (1, " + std::to_string(c) + ", " + std::to_string(h) + ", " +
              std::to_string(w) + "), got " + t.shape_string());
}

/// Concatenate along channels.
template <typename S>
Tensor4<S> concat_channels(const Tensor4<S>& a, const Tensor4<S>& b) {
  require(a.h == b.h && a.w == b.w, ErrorKind::ShapeMismatch, "concat: spatial shapes differ");
  Tensor4<S> out(a.c + b.c, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename S>
std::pair<Tensor4<S>, Tensor4<S>> split_channels(const Tensor4<S>& t, std::size_t first) {
  Tensor4<S> a(first, t.h, t.w), b(t.c - first, t.h, t.w);
  std::copy(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
  std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), t.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

template <typename S>
void add_into(Tensor4<S>& dst, const Tensor4<S>& src) {
  require(dst.same_shape(src), ErrorKind::ShapeMismatch, "add: shapes differ");
  for (std::size_t k = 0; k < dst.size(); ++k) dst.data[k] += src.data[k];
}

/// Named trainable tensor with its gradient accumulator.
template <typename S>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> s, S fill = S{}) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (auto e : shape) count *= e;
    value.assign(count, fill);
    grad.assign(count, S{});
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), S{}); }
};

/// Non-trainable persistent state (batch-norm running statistics).
template <typename S>
struct Buffer {
  std::string name;
  std::vector<S>* values;
};

template <typename S>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<S, float>) {
    return 1;
  } else if constexpr (std::is_same_v<S, double>) {
    return 2;
  } else {
    static_assert(sizeof(S) == 0, "unsupported scalar type");
  }
}

}  // namespace albf::nn
