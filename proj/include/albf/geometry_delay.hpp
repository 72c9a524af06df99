#pragma once

#include <cmath>
#include <cstdint>

#include "albf/array.hpp"
#include "albf/phantom_sim.hpp"

namespace albf {

/// Pixel layout. Rows are depth, columns lateral; lateral positions span x_min..x_max.
struct ImageGrid {
  std::size_t depth_px = 256;
  std::size_t lateral_px = 64;
  double z_min = 0, z_max = 0;
  double x_min = 0, x_max = 0;
  std::size_t channels = 0;  // probe channel count the grid was laid out for

  double z(std::size_t p) const {
    return depth_px > 1 ? z_min + (z_max - z_min) * static_cast<double>(p) / static_cast<double>(depth_px - 1)
                        : z_min;
  }
  double x(std::size_t q) const {
    return lateral_px > 1
               ? x_min + (x_max - x_min) * static_cast<double>(q) / static_cast<double>(lateral_px - 1)
               : x_min;
  }
  double dz() const { return depth_px > 1 ? (z_max - z_min) / static_cast<double>(depth_px - 1) : 0.0; }
  double dx() const { return lateral_px > 1 ? (x_max - x_min) / static_cast<double>(lateral_px - 1) : 0.0; }

  bool divisible_by(std::size_t k) const { return depth_px % k == 0 && lateral_px % k == 0; }

  void validate() const {
    require(depth_px * lateral_px > 0, ErrorKind::Configuration, "grid must have at least one pixel");
    require(z_min > 0 && z_max >= z_min, ErrorKind::Configuration, "grid depth range must be positive");
    require(x_max >= x_min, ErrorKind::Configuration, "grid lateral range is inverted");
  }

  std::uint64_t digest() const {
    return Digest()
        .add(static_cast<std::uint64_t>(depth_px))
        .add(static_cast<std::uint64_t>(lateral_px))
        .add(z_min)
        .add(z_max)
        .add(x_min)
        .add(x_max)
        .add(static_cast<std::uint64_t>(channels))
        .value();
  }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

/// Grid spanning the element extent laterally, centred on z_center, with a two-way depth
/// sampling rate of depth_rate_factor x fc.
inline ImageGrid make_grid(const ProbeConfig& probe, double z_center = 20e-3, std::size_t depth_px = 256,
                           std::size_t lateral_px = 64, double depth_rate_factor = 8.0) {
  ImageGrid g;
  g.depth_px = depth_px;
  g.lateral_px = lateral_px;
  g.channels = probe.num_channels;
  const double dz = probe.speed_of_sound / (2.0 * depth_rate_factor * probe.center_frequency);
  g.z_min = z_center - 0.5 * static_cast<double>(depth_px) * dz;
  g.z_max = g.z_min + static_cast<double>(depth_px - 1) * dz;
  g.x_min = probe.element_x(0);
  g.x_max = probe.element_x(probe.num_channels - 1);
  return g;
}

/// Delay-compensated cube, data(depth, lateral, channel).
struct DelayedTensor {
  Array3 data;
  ImageGrid grid;
  ProbeConfig probe;

  std::size_t depth() const { return data.extent(0); }
  std::size_t lateral() const { return data.extent(1); }
  std::size_t channels() const { return data.extent(2); }
};

/// Round-trip time for a 0-degree plane wave: down to the pixel, back to the element.
inline double compute_delay(double pixel_x, double pixel_z, double element_x, double c) {
  return (pixel_z + std::hypot(pixel_x - element_x, pixel_z)) / c;
}

/// Linear interpolation of one channel at fractional sample index; 0 outside the record.
inline double sample_at(const Array2& samples, std::size_t channel, double index) {
  const auto len = samples.extent(0);
  if (!(index >= 0.0) || index > static_cast<double>(len - 1)) return 0.0;
  const auto i0 = static_cast<std::size_t>(index);
  if (i0 + 1 >= len) return samples(i0, channel);
  const double f = index - static_cast<double>(i0);
  return samples(i0, channel) * (1.0 - f) + samples(i0 + 1, channel) * f;
}

inline DelayedTensor delay_compensate(const RFFrame& frame, const ImageGrid& grid) {
  grid.validate();
  const auto& probe = frame.probe;
  require(grid.channels == probe.num_channels && frame.num_channels() == probe.num_channels,
          ErrorKind::Configuration,
          "grid laid out for " + std::to_string(grid.channels) + " channels, frame has " +
              std::to_string(frame.num_channels()));

  DelayedTensor out;
  out.grid = grid;
  out.probe = probe;
  out.data = Array3({grid.depth_px, grid.lateral_px, probe.num_channels}, 0.0);

  const double fs = probe.sampling_frequency;
  const double c = probe.speed_of_sound;
  for (std::size_t p = 0; p < grid.depth_px; ++p) {
    const double z = grid.z(p);
    for (std::size_t q = 0; q < grid.lateral_px; ++q) {
      const double x = grid.x(q);
      auto cell = out.data.row(p, q);
      for (std::size_t i = 0; i < probe.num_channels; ++i) {
        const double t = compute_delay(x, z, probe.element_x(i), c);
        cell[i] = sample_at(frame.samples, i, (t - frame.t0) * fs);
      }
    }
  }
  return out;
}

}  // namespace albf
