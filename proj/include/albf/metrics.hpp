#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "albf/array.hpp"
#include "albf/beamformers.hpp"
#include "albf/geometry_delay.hpp"

namespace albf {

/// Circle in pixel coordinates (row = depth, col = lateral).
struct Circle {
  double row = 0, col = 0, radius = 0;

  bool contains(std::size_t p, std::size_t q) const {
    const double dr = static_cast<double>(p) - row, dc = static_cast<double>(q) - col;
    return dr * dr + dc * dc <= radius * radius;
  }
};

struct RegionSpec {
  Circle target;
  Circle background;

  void validate(std::size_t rows, std::size_t cols) const {
    for (const Circle* c : {&target, &background}) {
      require(c->radius > 0 && c->row - c->radius >= 0 && c->col - c->radius >= 0 &&
                  c->row + c->radius <= static_cast<double>(rows - 1) &&
                  c->col + c->radius <= static_cast<double>(cols - 1),
              ErrorKind::Configuration, "contrast region leaves the image");
    }
    const double d = std::hypot(target.row - background.row, target.col - background.col);
    require(d > target.radius + background.radius, ErrorKind::Configuration, "contrast regions overlap");
  }
};

struct RegionStats {
  std::size_t count = 0;
  double mean = 0;
  double stddev = 0;  // population
};

/// Welford accumulation over the pixels inside the circle.
inline RegionStats region_stats(const Array2& env, const Circle& c) {
  RegionStats s;
  double m2 = 0;
  for (std::size_t p = 0; p < env.extent(0); ++p) {
    for (std::size_t q = 0; q < env.extent(1); ++q) {
      if (!c.contains(p, q)) continue;
      ++s.count;
      const double v = env(p, q);
      const double delta = v - s.mean;
      s.mean += delta / static_cast<double>(s.count);
      m2 += delta * (v - s.mean);
    }
  }
  s.stddev = s.count ? std::sqrt(m2 / static_cast<double>(s.count)) : 0.0;
  return s;
}

struct ContrastResult {
  double cr = 0;
  std::optional<double> cnr_db;  // empty when both regions are constant
  std::string flag;
};

inline ContrastResult contrast_from_stats(const RegionStats& t, const RegionStats& b) {
  ContrastResult r;
  const double diff = std::abs(t.mean - b.mean);
  const double top = std::max(t.mean, b.mean);
  r.cr = top > 0 ? diff / top : 0.0;
  const double noise = std::sqrt(t.stddev * t.stddev + b.stddev * b.stddev);
  if (noise > 0) {
    r.cnr_db = 20.0 * std::log10(diff / noise);
  } else {
    r.flag = "both regions constant: CNR undefined";
  }
  return r;
}

inline ContrastResult contrast_metrics(const Array2& env, const RegionSpec& regions) {
  regions.validate(env.extent(0), env.extent(1));
  const auto t = region_stats(env, regions.target);
  const auto b = region_stats(env, regions.background);
  require(t.count >= 25 && b.count >= 25, ErrorKind::Configuration, "contrast regions need >= 25 pixels each");
  return contrast_from_stats(t, b);
}

enum class Axis { Axial, Lateral };

inline constexpr std::size_t kFwhmSearchWindow = 21;

struct PixelIndex {
  std::size_t row = 0, col = 0;
};

/// Brightest pixel within the square search window centred on the hint.
inline PixelIndex locate_peak(const Array2& env, PixelIndex hint, std::size_t window = kFwhmSearchWindow) {
  const std::size_t half = window / 2;
  const std::size_t r0 = hint.row > half ? hint.row - half : 0;
  const std::size_t c0 = hint.col > half ? hint.col - half : 0;
  const std::size_t r1 = std::min(env.extent(0) - 1, hint.row + half);
  const std::size_t c1 = std::min(env.extent(1) - 1, hint.col + half);
  PixelIndex best{r0, c0};
  for (std::size_t p = r0; p <= r1; ++p)
    for (std::size_t q = c0; q <= c1; ++q)
      if (env(p, q) > env(best.row, best.col)) best = {p, q};
  return best;
}

/// Width in samples of a 1-D profile at half its value at `peak`, by linear interpolation.
inline double half_max_width(std::span<const double> profile, std::size_t peak) {
  const double half = 0.5 * profile[peak];
  require(profile[peak] > 0, ErrorKind::UnboundedFwhm, "peak is not positive");
  std::optional<double> left, right;
  for (std::size_t k = peak; k > 0; --k) {
    if (profile[k - 1] < half) {
      const double f = (profile[k] - half) / (profile[k] - profile[k - 1]);
      left = static_cast<double>(k) - f;
      break;
    }
  }
  for (std::size_t k = peak; k + 1 < profile.size(); ++k) {
    if (profile[k + 1] < half) {
      const double f = (profile[k] - half) / (profile[k] - profile[k + 1]);
      right = static_cast<double>(k) + f;
      break;
    }
  }
  if (!left || !right) fail(ErrorKind::UnboundedFwhm, "profile stays above half maximum up to the image edge");
  return *right - *left;
}

/// Full width at half maximum through the peak nearest the hint, in millimetres.
inline double fwhm(const Array2& env, PixelIndex hint, Axis axis, const ImageGrid& grid) {
  require(hint.row < env.extent(0) && hint.col < env.extent(1), ErrorKind::Configuration,
          "FWHM hint outside the image");
  const auto peak = locate_peak(env, hint);
  std::vector<double> profile;
  std::size_t at = 0;
  double spacing = 0;
  if (axis == Axis::Axial) {
    for (std::size_t p = 0; p < env.extent(0); ++p) profile.push_back(env(p, peak.col));
    at = peak.row;
    spacing = grid.dz();
  } else {
    for (std::size_t q = 0; q < env.extent(1); ++q) profile.push_back(env(peak.row, q));
    at = peak.col;
    spacing = grid.dx();
  }
  return half_max_width(profile, at) * spacing * 1e3;
}

/// Pixel nearest to a physical position on the grid.
inline PixelIndex pixel_of(const ImageGrid& g, double x, double z) {
  auto nearest = [](double v, double lo, double step, std::size_t n) -> std::size_t {
    if (step <= 0) return 0;
    const double k = std::round((v - lo) / step);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n - 1)));
  };
  return {nearest(z, g.z_min, g.dz(), g.depth_px), nearest(x, g.x_min, g.dx(), g.lateral_px)};
}

struct MetricsReport {
  Method method = Method::DAS;
  std::optional<double> cr;
  std::optional<double> cnr_db;
  std::optional<double> axial_fwhm_mm;
  std::optional<double> lateral_fwhm_mm;
  std::string note;
};

/// One line of `key=value` pairs; absent fields print as "na".
inline std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(6);
  auto field = [&os](const char* key, const std::optional<double>& v) {
    os << ' ' << key << '=';
    if (v) {
      os << *v;
    } else {
      os << "na";
    }
  };
  os << "method=" << to_string(r.method);
  field("cr", r.cr);
  field("cnr_db", r.cnr_db);
  field("axial_fwhm_mm", r.axial_fwhm_mm);
  field("lateral_fwhm_mm", r.lateral_fwhm_mm);
  if (!r.note.empty()) os << " note=\"" << r.note << '"';
  return os.str();
}

}  // namespace albf
