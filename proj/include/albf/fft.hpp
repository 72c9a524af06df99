#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

namespace albf::fft {

namespace detail {

// FFTW's planner is not thread-safe; execution of an existing plan on new arrays is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int n, int sign) {
    std::lock_guard lock(mu_);
    auto key = std::make_pair(n, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<std::complex<double>> scratch(static_cast<std::size_t>(n));
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft_1d(n, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [_, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mu_;
  std::map<std::pair<int, int>, fftw_plan> plans_;
};

}  // namespace detail

/// In-place unnormalized forward DFT.
inline void forward(std::span<std::complex<double>> x) {
  if (x.empty()) return;
  auto plan = detail::PlanCache::instance().get(static_cast<int>(x.size()), FFTW_FORWARD);
  auto* p = reinterpret_cast<fftw_complex*>(x.data());
  fftw_execute_dft(plan, p, p);
}

/// In-place unnormalized inverse DFT (caller divides by n).
inline void inverse(std::span<std::complex<double>> x) {
  if (x.empty()) return;
  auto plan = detail::PlanCache::instance().get(static_cast<int>(x.size()), FFTW_BACKWARD);
  auto* p = reinterpret_cast<fftw_complex*>(x.data());
  fftw_execute_dft(plan, p, p);
}

/// Analytic signal of a real sequence: zero negative frequencies, double positive ones.
inline std::vector<std::complex<double>> analytic_signal(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> a(x.begin(), x.end());
  if (n == 0) return a;
  forward(a);
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < n; ++k) {
    if (k < (n + 1) / 2) {
      a[k] *= 2.0;
    } else if (!(n % 2 == 0 && k == half)) {
      a[k] = 0.0;
    }
  }
  inverse(a);
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : a) v *= inv;
  return a;
}

/// Imaginary part of the analytic signal (discrete Hilbert transform). The operator is
/// antisymmetric, so its adjoint is its negation.
inline void hilbert(std::span<const double> x, std::span<double> out) {
  auto a = analytic_signal(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i].imag();
}

}  // namespace albf::fft
