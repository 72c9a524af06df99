#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "albf/array.hpp"
#include "albf/beamformers.hpp"
#include "albf/fft.hpp"
#include "albf/png.hpp"

namespace albf {

inline constexpr double kDefaultDynamicRange = 60.0;

struct BModeImage {
  Array2 db_values;  // in [-dynamic_range, 0]
  double dynamic_range = kDefaultDynamicRange;
  double normalization_max = 0;  // 0 flags an all-zero input
  Method method = Method::DAS;
};

/// Analytic-signal magnitude of every lateral line, taken along depth.
inline Array2 envelope(const Array2& values) {
  const std::size_t m = values.extent(0), n = values.extent(1);
  Array2 env({m, n}, 0.0);
  std::vector<double> line(m);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t p = 0; p < m; ++p) line[p] = values(p, q);
    const auto a = fft::analytic_signal(line);
    for (std::size_t p = 0; p < m; ++p) env(p, q) = std::abs(a[p]);
  }
  return env;
}

inline Array2 envelope(const BeamformedData& b) { return envelope(b.values); }

inline BModeImage log_compress(const Array2& env, double dynamic_range = kDefaultDynamicRange,
                               Method method = Method::DAS) {
  require(dynamic_range > 0, ErrorKind::Contract, "dynamic range must be positive");
  double peak = 0;
  for (double v : env.flat()) {
    require(v >= 0, ErrorKind::Contract, "envelope values must be non-negative");
    peak = std::max(peak, v);
  }
  BModeImage img;
  img.dynamic_range = dynamic_range;
  img.method = method;
  img.normalization_max = peak;
  img.db_values = Array2(env.shape(), -dynamic_range);
  if (peak <= 0) return img;
  auto dst = img.db_values.flat();
  auto src = env.flat();
  for (std::size_t k = 0; k < src.size(); ++k) {
    const double db = src[k] > 0 ? 20.0 * std::log10(src[k] / peak) : -dynamic_range;
    dst[k] = std::clamp(db, -dynamic_range, 0.0);
  }
  return img;
}

/// Full display chain for a beamformed image.
inline BModeImage to_bmode(const BeamformedData& b, double dynamic_range = kDefaultDynamicRange) {
  return log_compress(envelope(b), dynamic_range, b.method);
}

/// Linear map [-DR, 0] dB -> [0, 255], rounding half up. Carries no labels of any kind.
inline Raster render_raster(const BModeImage& img) {
  Raster r;
  r.height = img.db_values.extent(0);
  r.width = img.db_values.extent(1);
  r.pixels.resize(r.width * r.height);
  const double dr = img.dynamic_range;
  auto src = img.db_values.flat();
  for (std::size_t k = 0; k < src.size(); ++k) {
    const double level = std::floor((src[k] + dr) / dr * 255.0 + 0.5);
    r.pixels[k] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
  }
  return r;
}

inline std::vector<std::uint8_t> render_png(const BModeImage& img) { return encode_png(render_raster(img)); }

}  // namespace albf
