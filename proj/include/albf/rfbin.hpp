#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "albf/checksum.hpp"
#include "albf/geometry_delay.hpp"
#include "albf/png.hpp"

namespace albf {

// rfbin layout, little-endian throughout:
//   "RFBIN001"
//   u8 kind (1 = RF frame, time x channel; 2 = delay-compensated cube, depth x lateral x channel)
//   u8 dtype (2 = f64), u8 endianness (0 = little)
//   probe: u64 channels, f64 pitch, fc, fs, c, pulse_cycles, u64 record length, f64 probe t0
//   f64 frame t0, u64 provenance digest
//   u8 has_grid; if 1: u64 depth_px, lateral_px, f64 z_min, z_max, x_min, x_max, u64 channels
//   u32 rank, u64 dims[rank]
//   payload (product(dims) x f64)
//   u64 CRC-64/XZ over every preceding byte
inline constexpr char kRfbinMagic[8] = {'R', 'F', 'B', 'I', 'N', '0', '0', '1'};

enum class RfbinKind : std::uint8_t { Frame = 1, Delayed = 2 };

struct RfbinFile {
  RfbinKind kind = RfbinKind::Frame;
  ProbeConfig probe;
  double t0 = 0;
  std::uint64_t provenance = 0;
  std::optional<ImageGrid> grid;
  std::variant<Array2, Array3> payload;
};

namespace detail {

struct ByteSink {
  std::vector<std::uint8_t> out;
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof v);
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
};

struct ByteSource {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;
  template <typename T>
  T get() {
    T v;
    require(sizeof v <= n - pos, ErrorKind::Integrity, "rfbin truncated");
    std::memcpy(&v, p + pos, sizeof v);
    pos += sizeof v;
    return v;
  }
};

inline void put_probe(ByteSink& s, const ProbeConfig& pr) {
  s.put(static_cast<std::uint64_t>(pr.num_channels));
  s.put(pr.pitch);
  s.put(pr.center_frequency);
  s.put(pr.sampling_frequency);
  s.put(pr.speed_of_sound);
  s.put(pr.pulse_cycles);
  s.put(static_cast<std::uint64_t>(pr.num_samples));
  s.put(pr.t0);
}

inline ProbeConfig get_probe(ByteSource& s) {
  ProbeConfig pr;
  pr.num_channels = s.get<std::uint64_t>();
  pr.pitch = s.get<double>();
  pr.center_frequency = s.get<double>();
  pr.sampling_frequency = s.get<double>();
  pr.speed_of_sound = s.get<double>();
  pr.pulse_cycles = s.get<double>();
  pr.num_samples = s.get<std::uint64_t>();
  pr.t0 = s.get<double>();
  return pr;
}

template <std::size_t R>
std::vector<std::uint8_t> emit(RfbinKind kind, const ProbeConfig& probe, double t0, std::uint64_t provenance,
                               const ImageGrid* grid, const NdArray<double, R>& data) {
  static_assert(std::endian::native == std::endian::little, "rfbin assumes a little-endian host");
  ByteSink s;
  s.put_bytes(kRfbinMagic, sizeof kRfbinMagic);
  s.put(static_cast<std::uint8_t>(kind));
  s.put(std::uint8_t{2});
  s.put(std::uint8_t{0});
  put_probe(s, probe);
  s.put(t0);
  s.put(provenance);
  s.put(static_cast<std::uint8_t>(grid ? 1 : 0));
  if (grid) {
    s.put(static_cast<std::uint64_t>(grid->depth_px));
    s.put(static_cast<std::uint64_t>(grid->lateral_px));
    s.put(grid->z_min);
    s.put(grid->z_max);
    s.put(grid->x_min);
    s.put(grid->x_max);
    s.put(static_cast<std::uint64_t>(grid->channels));
  }
  s.put(static_cast<std::uint32_t>(R));
  for (std::size_t a = 0; a < R; ++a) s.put(static_cast<std::uint64_t>(data.extent(a)));
  s.put_bytes(data.data(), data.size() * sizeof(double));
  s.put(crc64(s.out));
  return std::move(s.out);
}

}  // namespace detail

inline std::vector<std::uint8_t> emit_rfbin(const RFFrame& frame) {
  return detail::emit(RfbinKind::Frame, frame.probe, frame.t0, frame.provenance, nullptr, frame.samples);
}

inline std::vector<std::uint8_t> emit_rfbin(const DelayedTensor& t) {
  return detail::emit(RfbinKind::Delayed, t.probe, 0.0, 0, &t.grid, t.data);
}

inline RfbinFile parse_rfbin(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= sizeof kRfbinMagic + 8, ErrorKind::Integrity, "rfbin truncated");
  require(std::memcmp(bytes.data(), kRfbinMagic, sizeof kRfbinMagic) == 0, ErrorKind::Integrity, "bad rfbin magic");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  require(crc64({bytes.data(), body}) == stored, ErrorKind::Integrity, "rfbin checksum mismatch");

  detail::ByteSource s{bytes.data(), body, sizeof kRfbinMagic};
  RfbinFile f;
  const auto kind = s.get<std::uint8_t>();
  require(kind == 1 || kind == 2, ErrorKind::Integrity, "unknown rfbin kind");
  f.kind = static_cast<RfbinKind>(kind);
  require(s.get<std::uint8_t>() == 2, ErrorKind::Integrity, "unsupported rfbin dtype");
  require(s.get<std::uint8_t>() == 0, ErrorKind::Integrity, "rfbin must be little-endian");
  f.probe = detail::get_probe(s);
  f.t0 = s.get<double>();
  f.provenance = s.get<std::uint64_t>();
  if (s.get<std::uint8_t>()) {
    ImageGrid g;
    g.depth_px = s.get<std::uint64_t>();
    g.lateral_px = s.get<std::uint64_t>();
    g.z_min = s.get<double>();
    g.z_max = s.get<double>();
    g.x_min = s.get<double>();
    g.x_max = s.get<double>();
    g.channels = s.get<std::uint64_t>();
    f.grid = g;
  }
  const auto rank = s.get<std::uint32_t>();
  const std::size_t expected_rank = f.kind == RfbinKind::Frame ? 2 : 3;
  require(rank == expected_rank, ErrorKind::Integrity, "rfbin rank does not match its kind");
  std::vector<std::size_t> dims(rank);
  std::size_t count = 1;
  for (auto& d : dims) {
    d = s.get<std::uint64_t>();
    count *= d;
  }
  require(count * sizeof(double) == body - s.pos, ErrorKind::Integrity, "rfbin payload length does not match shape");
  if (rank == 2) {
    Array2 a({dims[0], dims[1]});
    std::memcpy(a.data(), bytes.data() + s.pos, count * sizeof(double));
    f.payload = std::move(a);
  } else {
    Array3 a({dims[0], dims[1], dims[2]});
    std::memcpy(a.data(), bytes.data() + s.pos, count * sizeof(double));
    f.payload = std::move(a);
  }
  return f;
}

inline RFFrame frame_from_rfbin(const RfbinFile& f) {
  require(f.kind == RfbinKind::Frame, ErrorKind::Configuration, "rfbin holds a delay-compensated cube, not a frame");
  RFFrame frame;
  frame.samples = std::get<Array2>(f.payload);
  frame.t0 = f.t0;
  frame.probe = f.probe;
  frame.provenance = f.provenance;
  require(frame.num_channels() == frame.probe.num_channels, ErrorKind::Integrity,
          "rfbin channel count differs from its probe header");
  return frame;
}

inline DelayedTensor delayed_from_rfbin(const RfbinFile& f) {
  require(f.kind == RfbinKind::Delayed && f.grid, ErrorKind::Configuration, "rfbin does not hold a delayed cube");
  return {std::get<Array3>(f.payload), *f.grid, f.probe};
}

inline RFFrame read_frame(const std::string& path) { return frame_from_rfbin(parse_rfbin(read_file(path))); }

inline void write_frame(const std::string& path, const RFFrame& frame) { write_file(path, emit_rfbin(frame)); }

}  // namespace albf
