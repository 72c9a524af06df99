#pragma once

#include <json.hpp>

#include <fstream>
#include <string>

#include "albf/beamformers.hpp"
#include "albf/geometry_delay.hpp"
#include "albf/neural/head.hpp"
#include "albf/phantom_sim.hpp"

// JSON forms of the configuration types. Lengths in metres, frequencies in Hz, times in
// seconds; missing keys keep their defaults.
namespace albf {

using json = nlohmann::json;

template <typename T>
void read_opt(const json& j, const char* key, T& dst) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) dst = it->get<T>();
}

inline void to_json(json& j, const ProbeConfig& p) {
  j = json{{"num_channels", p.num_channels},
           {"pitch_m", p.pitch},
           {"center_frequency_hz", p.center_frequency},
           {"sampling_frequency_hz", p.sampling_frequency},
           {"speed_of_sound_m_s", p.speed_of_sound},
           {"pulse_cycles", p.pulse_cycles},
           {"num_samples", p.num_samples},
           {"t0_s", p.t0}};
}

inline void from_json(const json& j, ProbeConfig& p) {
  read_opt(j, "num_channels", p.num_channels);
  read_opt(j, "pitch_m", p.pitch);
  read_opt(j, "center_frequency_hz", p.center_frequency);
  p.sampling_frequency = 4.0 * p.center_frequency;
  read_opt(j, "sampling_frequency_hz", p.sampling_frequency);
  read_opt(j, "speed_of_sound_m_s", p.speed_of_sound);
  read_opt(j, "pulse_cycles", p.pulse_cycles);
  read_opt(j, "num_samples", p.num_samples);
  read_opt(j, "t0_s", p.t0);
}

inline void to_json(json& j, const PhantomSpec& ph) {
  json points = json::array(), cysts = json::array();
  for (const auto& p : ph.point_targets) points.push_back({{"x_m", p.x}, {"z_m", p.z}, {"amplitude", p.amplitude}});
  for (const auto& c : ph.cyst_regions)
    cysts.push_back({{"x_m", c.x}, {"z_m", c.z}, {"radius_m", c.radius}, {"echogenicity", c.echogenicity}});
  j = json{{"point_targets", points},
           {"cyst_regions", cysts},
           {"speckle_density_per_mm2", ph.speckle_density},
           {"speckle_region",
            {{"x_min_m", ph.speckle_region.x_min},
             {"x_max_m", ph.speckle_region.x_max},
             {"z_min_m", ph.speckle_region.z_min},
             {"z_max_m", ph.speckle_region.z_max}}},
           {"rng_seed", ph.rng_seed}};
}

inline void from_json(const json& j, PhantomSpec& ph) {
  if (j.contains("point_targets")) {
    for (const auto& p : j.at("point_targets")) {
      PointTarget t;
      read_opt(p, "x_m", t.x);
      read_opt(p, "z_m", t.z);
      read_opt(p, "amplitude", t.amplitude);
      ph.point_targets.push_back(t);
    }
  }
  if (j.contains("cyst_regions")) {
    for (const auto& c : j.at("cyst_regions")) {
      CystRegion r;
      read_opt(c, "x_m", r.x);
      read_opt(c, "z_m", r.z);
      read_opt(c, "radius_m", r.radius);
      read_opt(c, "echogenicity", r.echogenicity);
      ph.cyst_regions.push_back(r);
    }
  }
  read_opt(j, "speckle_density_per_mm2", ph.speckle_density);
  if (j.contains("speckle_region")) {
    const auto& b = j.at("speckle_region");
    read_opt(b, "x_min_m", ph.speckle_region.x_min);
    read_opt(b, "x_max_m", ph.speckle_region.x_max);
    read_opt(b, "z_min_m", ph.speckle_region.z_min);
    read_opt(b, "z_max_m", ph.speckle_region.z_max);
  }
  read_opt(j, "rng_seed", ph.rng_seed);
}

inline void to_json(json& j, const ImageGrid& g) {
  j = json{{"depth_px", g.depth_px}, {"lateral_px", g.lateral_px}, {"z_min_m", g.z_min}, {"z_max_m", g.z_max},
           {"x_min_m", g.x_min},     {"x_max_m", g.x_max},           {"channels", g.channels}};
}

/// Explicit extents, or a centre depth plus depth-rate factor laid out against the probe.
inline ImageGrid grid_from_json(const json& j, const ProbeConfig& probe) {
  if (j.contains("z_min_m")) {
    ImageGrid g = make_grid(probe);
    read_opt(j, "depth_px", g.depth_px);
    read_opt(j, "lateral_px", g.lateral_px);
    read_opt(j, "z_min_m", g.z_min);
    read_opt(j, "z_max_m", g.z_max);
    read_opt(j, "x_min_m", g.x_min);
    read_opt(j, "x_max_m", g.x_max);
    read_opt(j, "channels", g.channels);
    return g;
  }
  double z_center = 20e-3, rate = 8.0;
  std::size_t m = 256, n = 64;
  read_opt(j, "z_center_m", z_center);
  read_opt(j, "depth_rate_factor", rate);
  read_opt(j, "depth_px", m);
  read_opt(j, "lateral_px", n);
  return make_grid(probe, z_center, m, n, rate);
}

inline void to_json(json& j, const MvdrConfig& c) {
  j = json{{"subaperture_len", c.subaperture_len},
           {"diagonal_loading", c.diagonal_loading},
           {"averaging_depth_samples", c.averaging_depth_samples}};
}
inline void from_json(const json& j, MvdrConfig& c) {
  read_opt(j, "subaperture_len", c.subaperture_len);
  read_opt(j, "diagonal_loading", c.diagonal_loading);
  read_opt(j, "averaging_depth_samples", c.averaging_depth_samples);
}

inline void to_json(json& j, const GcfConfig& c) { j = json{{"low_freq_cutoff", c.low_freq_cutoff}}; }
inline void from_json(const json& j, GcfConfig& c) { read_opt(j, "low_freq_cutoff", c.low_freq_cutoff); }

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, path + ": " + e.what());
  }
}

}  // namespace albf
