#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cctype>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "albf/array.hpp"
#include "albf/fft.hpp"
#include "albf/geometry_delay.hpp"

namespace albf {

enum class Method { DAS, FDMAS, MVDR, GCF, MODEL };

inline constexpr Method kConventionalMethods[] = {Method::DAS, Method::FDMAS, Method::MVDR, Method::GCF};
inline constexpr Method kAllMethods[] = {Method::DAS, Method::FDMAS, Method::MVDR, Method::GCF, Method::MODEL};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::DAS: return "DAS";
    case Method::FDMAS: return "FDMAS";
    case Method::MVDR: return "MVDR";
    case Method::GCF: return "GCF";
    case Method::MODEL: return "MODEL";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (auto m : kAllMethods) {
    std::string lower = to_string(m);
    for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (s == to_string(m) || s == lower) return m;
  }
  return std::nullopt;
}

/// Pre-envelope beamformed image, values(depth, lateral).
struct BeamformedData {
  Array2 values;
  Method method = Method::DAS;
  ImageGrid grid;
  ProbeConfig probe;
};

struct MvdrConfig {
  std::size_t subaperture_len = 8;
  double diagonal_loading = 1.0 / 100.0;
  std::size_t averaging_depth_samples = 1;

  static MvdrConfig for_channels(std::size_t n) { return {n / 2, 1.0 / 100.0, 1}; }

  void validate(std::size_t channels) const {
    require(subaperture_len >= 1 && subaperture_len <= channels, ErrorKind::Configuration,
            "MVDR subaperture length must be in [1, N_ch]");
    require(diagonal_loading > 0, ErrorKind::Configuration, "MVDR diagonal loading must be positive");
  }
};

struct GcfConfig {
  std::size_t low_freq_cutoff = 1;

  void validate(std::size_t channels) const {
    require(2 * low_freq_cutoff < channels, ErrorKind::Configuration, "GCF cutoff M0 must be < N_ch/2");
  }
};

namespace detail {

inline BeamformedData make_output(const DelayedTensor& t, Method m) {
  BeamformedData out;
  out.values = Array2({t.depth(), t.lateral()}, 0.0);
  out.method = m;
  out.grid = t.grid;
  out.probe = t.probe;
  return out;
}

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace detail

inline BeamformedData das(const DelayedTensor& t) {
  auto out = detail::make_output(t, Method::DAS);
  for (std::size_t p = 0; p < t.depth(); ++p) {
    for (std::size_t q = 0; q < t.lateral(); ++q) {
      double acc = 0;
      for (double v : t.data.row(p, q)) acc += v;
      out.values(p, q) = acc;
    }
  }
  return out;
}

inline BeamformedData das(const DelayedTensor& t, const Array3& apod) {
  require_same_shape(t.data, apod, "das apodization");
  auto out = detail::make_output(t, Method::DAS);
  for (std::size_t p = 0; p < t.depth(); ++p) {
    for (std::size_t q = 0; q < t.lateral(); ++q) {
      const auto s = t.data.row(p, q);
      const auto w = apod.row(p, q);
      double acc = 0;
      for (std::size_t i = 0; i < s.size(); ++i) acc += w[i] * s[i];
      out.values(p, q) = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// F-DMAS

inline constexpr std::size_t kFdmasTaps = 63;

/// Two-way sampling rate of the grid's depth axis.
inline double depth_sampling_rate(const ImageGrid& g, const ProbeConfig& probe) {
  const double dz = g.dz();
  return dz > 0 ? probe.speed_of_sound / (2.0 * dz) : 0.0;
}

/// Linear-phase Hamming-windowed bandpass over [1.5 fc, 2.5 fc] at sampling rate fs. The
/// upper edge is clipped to Nyquist when fs < 5 fc.
inline std::vector<double> fdmas_filter_taps(double fc, double fs) {
  require(fs >= 4.0 * fc * (1.0 - 1e-12), ErrorKind::Configuration,
          "F-DMAS needs a sampling rate of at least 4 x fc");
  const double f1 = 1.5 * fc / fs;
  const double f2 = std::min(2.5 * fc / fs, 0.5);
  const std::size_t n = kFdmasTaps;
  const double mid = 0.5 * static_cast<double>(n - 1);
  std::vector<double> h(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double m = static_cast<double>(k) - mid;
    const double ideal = 2.0 * f2 * detail::sinc(2.0 * f2 * m) - 2.0 * f1 * detail::sinc(2.0 * f1 * m);
    const double window = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / (n - 1));
    h[k] = ideal * window;
  }
  return h;
}

/// Sum of signed square-root pairwise products per pixel, before filtering.
/// Uses sum_{i<j} u_i u_j = ((sum u)^2 - sum u^2) / 2 with u = sign(s) sqrt|s|.
inline Array2 fdmas_prefilter(const DelayedTensor& t) {
  require(t.channels() >= 2, ErrorKind::Configuration, "F-DMAS needs at least 2 channels");
  Array2 out({t.depth(), t.lateral()}, 0.0);
  for (std::size_t p = 0; p < t.depth(); ++p) {
    for (std::size_t q = 0; q < t.lateral(); ++q) {
      double su = 0, sabs = 0;
      for (double v : t.data.row(p, q)) {
        const double a = std::abs(v);
        su += std::copysign(std::sqrt(a), v);
        sabs += a;
      }
      out(p, q) = 0.5 * (su * su - sabs);
    }
  }
  return out;
}

/// Zero-padded, centred ("same") convolution of every column of x with h, via FFT.
inline Array2 filter_columns(const Array2& x, const std::vector<double>& h) {
  const std::size_t m = x.extent(0), n = x.extent(1);
  const std::size_t len = m + h.size() - 1;
  const std::size_t shift = (h.size() - 1) / 2;
  std::vector<std::complex<double>> hf(len, 0.0);
  for (std::size_t k = 0; k < h.size(); ++k) hf[k] = h[k];
  fft::forward(hf);

  Array2 out({m, n}, 0.0);
  std::vector<std::complex<double>> buf(len);
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t q = 0; q < n; ++q) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t p = 0; p < m; ++p) buf[p] = x(p, q);
    fft::forward(buf);
    for (std::size_t k = 0; k < len; ++k) buf[k] *= hf[k];
    fft::inverse(buf);
    for (std::size_t p = 0; p < m; ++p) out(p, q) = buf[p + shift].real() * inv;
  }
  return out;
}

inline BeamformedData fdmas(const DelayedTensor& t) {
  require(t.probe.sampling_frequency >= 4.0 * t.probe.center_frequency * (1.0 - 1e-12),
          ErrorKind::Configuration, "F-DMAS: probe fs < 4 fc, the 2 fc band is unrepresentable");
  const double rate = depth_sampling_rate(t.grid, t.probe);
  require(rate >= 4.0 * t.probe.center_frequency * (1.0 - 1e-12), ErrorKind::Configuration,
          "F-DMAS: grid depth sampling rate < 4 fc, the 2 fc band is unrepresentable");
  auto out = detail::make_output(t, Method::FDMAS);
  out.values = filter_columns(fdmas_prefilter(t), fdmas_filter_taps(t.probe.center_frequency, rate));
  return out;
}

// ---------------------------------------------------------------------------------------------
// MVDR

struct MvdrDiagnostics {
  std::size_t fallback_pixels = 0;
  std::vector<std::size_t> fallback_indices;  // p * lateral + q
};

struct MvdrResult {
  BeamformedData image;
  MvdrDiagnostics diagnostics;
  std::optional<Array3> weights;  // (depth, lateral, L) when requested
};

/// Spatially smoothed, depth-averaged covariance, diagonal loading, w = R'^-1 a / (a^T R'^-1 a).
inline MvdrResult mvdr(const DelayedTensor& t, const MvdrConfig& cfg, bool keep_weights = false) {
  const std::size_t N = t.channels();
  cfg.validate(N);
  const std::size_t L = cfg.subaperture_len;
  const std::size_t K = N - L + 1;
  const std::size_t m = t.depth(), n = t.lateral();
  const std::size_t avg = cfg.averaging_depth_samples;

  MvdrResult res{detail::make_output(t, Method::MVDR), {}, std::nullopt};
  if (keep_weights) res.weights = Array3({m, n, L}, 0.0);

  Eigen::MatrixXd R(L, L);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(L));
  Eigen::VectorXd w(L), mean_sub(L);
  Eigen::LLT<Eigen::MatrixXd> llt(static_cast<Eigen::Index>(L));

  for (std::size_t p = 0; p < m; ++p) {
    const std::size_t r0 = p >= avg ? p - avg : 0;
    const std::size_t r1 = std::min(m - 1, p + avg);
    for (std::size_t q = 0; q < n; ++q) {
      R.setZero();
      std::size_t snapshots = 0;
      for (std::size_t r = r0; r <= r1; ++r) {
        const double* s = t.data.row(r, q).data();
        for (std::size_t k = 0; k < K; ++k) {
          Eigen::Map<const Eigen::VectorXd> sk(s + k, static_cast<Eigen::Index>(L));
          R.selfadjointView<Eigen::Lower>().rankUpdate(sk);
        }
        snapshots += K;
      }
      R.triangularView<Eigen::StrictlyUpper>() = R.transpose();
      R /= static_cast<double>(snapshots);

      const double trace = R.trace();
      bool fallback = !(trace > 0) || !std::isfinite(trace);
      if (!fallback) {
        R.diagonal().array() += cfg.diagonal_loading * trace / static_cast<double>(L);
        llt.compute(R);
        if (llt.info() == Eigen::Success) {
          w = llt.solve(ones);
          const double denom = ones.dot(w);
          if (denom > 0 && std::isfinite(denom)) {
            w /= denom;
          } else {
            fallback = true;
          }
        } else {
          fallback = true;
        }
      }
      if (fallback) {
        w.setConstant(1.0 / static_cast<double>(L));
        ++res.diagnostics.fallback_pixels;
        res.diagnostics.fallback_indices.push_back(p * n + q);
      }

      const double* s = t.data.row(p, q).data();
      mean_sub.setZero();
      for (std::size_t k = 0; k < K; ++k) {
        mean_sub += Eigen::Map<const Eigen::VectorXd>(s + k, static_cast<Eigen::Index>(L));
      }
      res.image.values(p, q) = w.dot(mean_sub) / static_cast<double>(K);
      if (keep_weights) {
        auto dst = res.weights->row(p, q);
        for (std::size_t l = 0; l < L; ++l) dst[l] = w[static_cast<Eigen::Index>(l)];
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------------------------
// GCF

/// Per-pixel coherence: low-frequency aperture-spectrum energy over total energy.
/// Only the 2*M0+1 low bins are evaluated; the total comes from Parseval.
inline Array2 gcf_map(const DelayedTensor& t, const GcfConfig& cfg) {
  const std::size_t N = t.channels();
  cfg.validate(N);
  const std::size_t M0 = cfg.low_freq_cutoff;
  std::vector<double> cs(N * (M0 + 1)), sn(N * (M0 + 1));
  for (std::size_t k = 0; k <= M0; ++k) {
    for (std::size_t i = 0; i < N; ++i) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * i % N) / static_cast<double>(N);
      cs[k * N + i] = std::cos(ang);
      sn[k * N + i] = std::sin(ang);
    }
  }

  Array2 out({t.depth(), t.lateral()}, 0.0);
  for (std::size_t p = 0; p < t.depth(); ++p) {
    for (std::size_t q = 0; q < t.lateral(); ++q) {
      const auto s = t.data.row(p, q);
      double dc = 0, sq = 0;
      for (double v : s) {
        dc += v;
        sq += v * v;
      }
      const double total = static_cast<double>(N) * sq;
      if (!(total > 0)) continue;
      double low = dc * dc;
      for (std::size_t k = 1; k <= M0; ++k) {
        double re = 0, im = 0;
        for (std::size_t i = 0; i < N; ++i) {
          re += s[i] * cs[k * N + i];
          im -= s[i] * sn[k * N + i];
        }
        low += 2.0 * (re * re + im * im);
      }
      out(p, q) = std::clamp(low / total, 0.0, 1.0);
    }
  }
  return out;
}

inline BeamformedData gcf(const DelayedTensor& t, const GcfConfig& cfg) {
  auto coeff = gcf_map(t, cfg);
  auto out = das(t);
  out.method = Method::GCF;
  for (std::size_t k = 0; k < out.values.size(); ++k) out.values.storage()[k] *= coeff.storage()[k];
  return out;
}

struct BeamformerSettings {
  MvdrConfig mvdr;
  GcfConfig gcf;
};

/// Runs one of the conventional beamformers by tag.
inline BeamformedData beamform(const DelayedTensor& t, Method m, const BeamformerSettings& s) {
  switch (m) {
    case Method::DAS: return das(t);
    case Method::FDMAS: return fdmas(t);
    case Method::MVDR: return mvdr(t, s.mvdr).image;
    case Method::GCF: return gcf(t, s.gcf);
    case Method::MODEL: break;
  }
  fail(ErrorKind::Configuration, "MODEL images come from the network, not beamform()");
}

}  // namespace albf
