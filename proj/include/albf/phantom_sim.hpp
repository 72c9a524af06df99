#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "albf/array.hpp"
#include "albf/checksum.hpp"
#include "albf/error.hpp"

namespace albf {

struct ProbeConfig {
  std::size_t num_channels = 16;
  double pitch = 0.3e-3;               // m
  double center_frequency = 7.6e6;     // Hz
  double sampling_frequency = 30.4e6;  // Hz, 4 x fc
  double speed_of_sound = 1540.0;      // m/s
  double pulse_cycles = 2.5;
  std::size_t num_samples = 2048;  // record length per channel
  double t0 = 0.0;                 // time of sample 0, s

  double element_x(std::size_t i) const {
    return (static_cast<double>(i) - 0.5 * static_cast<double>(num_channels - 1)) * pitch;
  }

  double window_end() const { return t0 + static_cast<double>(num_samples - 1) / sampling_frequency; }

  void validate() const {
    require(num_channels >= 2, ErrorKind::Configuration, "probe needs at least 2 channels");
    require(pitch > 0 && center_frequency > 0 && speed_of_sound > 0 && pulse_cycles > 0,
            ErrorKind::Configuration, "probe pitch, fc, c and pulse cycles must be positive");
    require(sampling_frequency >= 4.0 * center_frequency * (1.0 - 1e-12), ErrorKind::Configuration,
            "sampling frequency must be at least 4 x center frequency");
    require(num_samples >= 2, ErrorKind::Configuration, "record length must be at least 2 samples");
  }

  std::uint64_t digest() const {
    return Digest()
        .add(static_cast<std::uint64_t>(num_channels))
        .add(pitch)
        .add(center_frequency)
        .add(sampling_frequency)
        .add(speed_of_sound)
        .add(pulse_cycles)
        .add(static_cast<std::uint64_t>(num_samples))
        .add(t0)
        .value();
  }

  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

struct PointTarget {
  double x = 0, z = 0, amplitude = 1;
};

struct CystRegion {
  double x = 0, z = 0, radius = 0;
  double echogenicity = 0;  // relative speckle amplitude inside
};

struct Box {
  double x_min = -4e-3, x_max = 4e-3, z_min = 15e-3, z_max = 25e-3;
};

struct PhantomSpec {
  std::vector<PointTarget> point_targets;
  std::vector<CystRegion> cyst_regions;
  double speckle_density = 0;  // scatterers per mm^2
  Box speckle_region;
  std::uint64_t rng_seed = 0;

  bool empty() const { return point_targets.empty() && speckle_density <= 0; }

  std::uint64_t digest() const {
    Digest d;
    d.add(static_cast<std::uint64_t>(point_targets.size()));
    for (const auto& p : point_targets) d.add(p.x).add(p.z).add(p.amplitude);
    d.add(static_cast<std::uint64_t>(cyst_regions.size()));
    for (const auto& c : cyst_regions) d.add(c.x).add(c.z).add(c.radius).add(c.echogenicity);
    d.add(speckle_density)
        .add(speckle_region.x_min)
        .add(speckle_region.x_max)
        .add(speckle_region.z_min)
        .add(speckle_region.z_max)
        .add(rng_seed);
    return d.value();
  }

  void validate() const {
    for (const auto& p : point_targets) {
      require(p.z > 0, ErrorKind::Configuration, "point target depth must be positive");
      require(p.amplitude >= 0, ErrorKind::Configuration, "point target amplitude must be >= 0");
    }
    for (const auto& c : cyst_regions) {
      require(c.z > 0 && c.radius > 0 && c.echogenicity >= 0, ErrorKind::Configuration,
              "cyst needs positive depth, radius and non-negative echogenicity");
    }
    if (speckle_density > 0) {
      require(speckle_region.z_min > 0 && speckle_region.z_max > speckle_region.z_min &&
                  speckle_region.x_max > speckle_region.x_min,
              ErrorKind::Configuration, "speckle region must be a non-empty box at positive depth");
    }
  }
};

/// Raw per-channel samples from one 0-degree plane-wave transmit. samples(t, channel).
struct RFFrame {
  Array2 samples;
  double t0 = 0;
  ProbeConfig probe;
  std::uint64_t provenance = 0;

  std::size_t num_samples() const { return samples.extent(0); }
  std::size_t num_channels() const { return samples.extent(1); }

  /// Content digest over probe and sample bytes.
  std::uint64_t digest() const {
    return Digest()
        .add(probe.digest())
        .add(t0)
        .add_bytes(samples.data(), samples.size() * sizeof(double))
        .value();
  }
};

/// Gaussian-enveloped sinusoid; pulse_cycles is the -6 dB duration in carrier periods.
struct Pulse {
  double fc;
  double sigma;
  double half_support;

  explicit Pulse(const ProbeConfig& p)
      : fc(p.center_frequency),
        sigma(p.pulse_cycles / p.center_frequency / (2.0 * std::sqrt(2.0 * std::numbers::ln2))),
        half_support(5.0 * sigma) {}

  double operator()(double tau) const {
    return std::exp(-0.5 * tau * tau / (sigma * sigma)) * std::cos(2.0 * std::numbers::pi * fc * tau);
  }
};

/// Two-way time of flight for a 0-degree plane wave to (x, z) and back to an element at element_x.
inline double two_way_time(double x, double z, double element_x, double c) {
  return (z + std::hypot(x - element_x, z)) / c;
}

struct Scatterer {
  double x, z, amplitude;
};

/// Expands the phantom into discrete scatterers. Deterministic in rng_seed.
inline std::vector<Scatterer> realize_scatterers(const PhantomSpec& phantom) {
  std::vector<Scatterer> out;
  for (const auto& p : phantom.point_targets) out.push_back({p.x, p.z, p.amplitude});
  if (phantom.speckle_density <= 0) return out;

  const auto& box = phantom.speckle_region;
  const double area_mm2 = (box.x_max - box.x_min) * (box.z_max - box.z_min) * 1e6;
  const auto count = static_cast<std::size_t>(std::llround(phantom.speckle_density * area_mm2));
  std::mt19937_64 rng(phantom.rng_seed);
  std::uniform_real_distribution<double> ux(box.x_min, box.x_max), uz(box.z_min, box.z_max);
  std::normal_distribution<double> amp(0.0, 1.0);
  out.reserve(out.size() + count);
  for (std::size_t k = 0; k < count; ++k) {
    const double x = ux(rng), z = uz(rng);
    double a = std::abs(amp(rng));
    for (const auto& c : phantom.cyst_regions) {
      if (std::hypot(x - c.x, z - c.z) <= c.radius) a *= c.echogenicity;
    }
    out.push_back({x, z, a});
  }
  return out;
}

inline RFFrame synthesize_frame(const PhantomSpec& phantom, const ProbeConfig& probe) {
  probe.validate();
  phantom.validate();

  RFFrame frame;
  frame.samples = Array2({probe.num_samples, probe.num_channels}, 0.0);
  frame.t0 = probe.t0;
  frame.probe = probe;
  frame.provenance = Digest().add(phantom.digest()).add(probe.digest()).value();

  const Pulse pulse(probe);
  const double fs = probe.sampling_frequency;
  const double c = probe.speed_of_sound;
  const auto ns = static_cast<long>(probe.num_samples);

  std::vector<double> elem(probe.num_channels);
  for (std::size_t i = 0; i < elem.size(); ++i) elem[i] = probe.element_x(i);

  for (const auto& s : realize_scatterers(phantom)) {
    if (s.amplitude == 0) continue;
    for (std::size_t i = 0; i < elem.size(); ++i) {
      const double r = std::hypot(s.x - elem[i], s.z);
      const double t = (s.z + r) / c;
      if (t < probe.t0 || t > probe.window_end()) {
        fail(ErrorKind::OutOfWindow, "scatterer at z=" + std::to_string(s.z) +
                                         " m arrives outside the simulated time window");
      }
      const double gain = s.amplitude / std::sqrt(r);
      const long lo = std::max(0L, static_cast<long>(std::ceil((t - pulse.half_support - probe.t0) * fs)));
      const long hi = std::min(ns - 1, static_cast<long>(std::floor((t + pulse.half_support - probe.t0) * fs)));
      for (long n = lo; n <= hi; ++n) {
        const double tau = probe.t0 + static_cast<double>(n) / fs - t;
        frame.samples(n, i) += gain * pulse(tau);
      }
    }
  }
  return frame;
}

}  // namespace albf
