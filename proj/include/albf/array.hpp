#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "albf/error.hpp"

namespace albf {

/// Dense row-major array of fixed rank. Last index varies fastest.
template <typename T, std::size_t Rank>
class NdArray {
 public:
  using value_type = T;
  using Shape = std::array<std::size_t, Rank>;

  NdArray() { shape_.fill(0); }
  explicit NdArray(const Shape& shape, T fill = T{}) : shape_(shape), data_(count(shape), fill) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename... I>
  T& operator()(I... idx) noexcept {
    static_assert(sizeof...(I) == Rank);
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  const T& operator()(I... idx) const noexcept {
    static_assert(sizeof...(I) == Rank);
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Contiguous view of the innermost axis at the given leading indices.
  template <typename... I>
  std::span<T> row(I... lead) noexcept {
    static_assert(sizeof...(I) == Rank - 1);
    std::array<std::size_t, Rank> idx{static_cast<std::size_t>(lead)..., 0};
    return {data_.data() + offset(idx), shape_[Rank - 1]};
  }
  template <typename... I>
  std::span<const T> row(I... lead) const noexcept {
    static_assert(sizeof...(I) == Rank - 1);
    std::array<std::size_t, Rank> idx{static_cast<std::size_t>(lead)..., 0};
    return {data_.data() + offset(idx), shape_[Rank - 1]};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t count(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
  }

 private:
  std::size_t offset(const std::array<std::size_t, Rank>& idx) const noexcept {
    std::size_t off = 0;
    for (std::size_t a = 0; a < Rank; ++a) off = off * shape_[a] + idx[a];
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Array2 = NdArray<double, 2>;
using Array3 = NdArray<double, 3>;

template <typename T, std::size_t R>
std::string shape_string(const NdArray<T, R>& a) {
  std::string s = "(";
  for (std::size_t i = 0; i < R; ++i) {
    if (i) s += ", ";
    s += std::to_string(a.extent(i));
  }
  return s + ")";
}

template <typename T, std::size_t R>
void require_same_shape(const NdArray<T, R>& a, const NdArray<T, R>& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::ShapeMismatch,
          std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace albf
