#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "albf/checksum.hpp"
#include "albf/neural/adam.hpp"
#include "albf/neural/unet.hpp"
#include "albf/png.hpp"

namespace albf::nn {

// Layout (little-endian):
//   "ALBF0001"
//   u32 tensor count
//   per tensor: u32 name length, name, u8 dtype (1 f32, 2 f64, 3 u64), u32 rank, u64 dims[rank], raw data
//   u64 CRC-64/XZ of every preceding byte
inline constexpr char kCheckpointMagic[8] = {'A', 'L', 'B', 'F', '0', '0', '0', '1'};
inline constexpr std::uint8_t kDtypeU64 = 3;

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

struct RawTensor {
  std::uint8_t dtype = 0;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;
};

namespace detail {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof v);
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }

  template <typename T>
  void tensor(const std::string& name, std::uint8_t dtype, const std::vector<std::uint64_t>& dims,
              const std::vector<T>& data) {
    put(static_cast<std::uint32_t>(name.size()));
    put_bytes(name.data(), name.size());
    put(dtype);
    put(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put(d);
    put_bytes(data.data(), data.size() * sizeof(T));
    ++count;
  }

  std::vector<std::uint8_t> out;
  std::uint32_t count = 0;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof v);
    std::memcpy(&v, p_ + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  void get_bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p_ + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  void need(std::size_t k) const {
    if (k > n_ - pos_) fail(ErrorKind::Integrity, "checkpoint truncated");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline std::size_t dtype_size(std::uint8_t code) {
  switch (code) {
    case 1: return 4;
    case 2: return 8;
    case kDtypeU64: return 8;
    default: fail(ErrorKind::Integrity, "unknown dtype code " + std::to_string(code));
  }
}

}  // namespace detail

/// Validates magic and checksum, then returns the named tensor table.
inline std::map<std::string, RawTensor> parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= sizeof kCheckpointMagic + 4 + 8, ErrorKind::Integrity, "checkpoint truncated");
  require(std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) == 0, ErrorKind::Integrity,
          "bad checkpoint magic");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  require(crc64({bytes.data(), body}) == stored, ErrorKind::Integrity, "checkpoint checksum mismatch");

  detail::Reader r(bytes.data() + sizeof kCheckpointMagic, body - sizeof kCheckpointMagic);
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, RawTensor> table;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint32_t>();
    require(len <= r.remaining(), ErrorKind::Integrity, "checkpoint truncated");
    std::string name(len, '\0');
    r.get_bytes(name.data(), len);
    RawTensor t;
    t.dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    require(rank <= 8, ErrorKind::Integrity, "implausible tensor rank");
    std::uint64_t elems = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.get<std::uint64_t>());
      elems *= t.dims.back();
    }
    const std::uint64_t nbytes = elems * detail::dtype_size(t.dtype);
    require(nbytes <= r.remaining(), ErrorKind::Integrity, "checkpoint truncated");
    t.bytes.resize(nbytes);
    r.get_bytes(t.bytes.data(), nbytes);
    table.emplace(std::move(name), std::move(t));
  }
  require(r.remaining() == 0, ErrorKind::Integrity, "trailing bytes after tensor table");
  return table;
}

inline std::uint64_t checkpoint_checksum(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 8, ErrorKind::Integrity, "checkpoint truncated");
  std::uint64_t v;
  std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
  return v;
}

template <typename S>
std::vector<std::uint8_t> serialize_checkpoint(UNet<S>& model, const AdamState<S>& opt) {
  const auto& cfg = model.config();
  detail::Writer w;
  w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put(std::uint32_t{0});  // patched below

  auto scalar = [&w](const std::string& name, std::uint64_t v) {
    w.tensor(name, kDtypeU64, {1}, std::vector<std::uint64_t>{v});
  };
  scalar("meta.config_digest", cfg.template digest<S>());
  scalar("meta.in_channels", cfg.in_channels);
  scalar("meta.stem_channels", cfg.stem_channels);
  scalar("meta.step", opt.step);

  const auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto* p = params[k];
    std::vector<std::uint64_t> dims(p->shape.begin(), p->shape.end());
    w.tensor(p->name, dtype_code<S>(), dims, p->value);
    if (k < opt.m.size()) {
      w.tensor("adam.m." + p->name, dtype_code<S>(), dims, opt.m[k]);
      w.tensor("adam.v." + p->name, dtype_code<S>(), dims, opt.v[k]);
    }
  }
  for (const auto& b : model.buffers()) {
    w.tensor(b.name, dtype_code<S>(), {b.values->size()}, *b.values);
  }
  std::memcpy(w.out.data() + sizeof kCheckpointMagic, &w.count, sizeof w.count);
  const std::uint64_t sum = crc64(w.out);
  w.put(sum);
  return std::move(w.out);
}

namespace detail {

inline std::uint64_t scalar_u64(const std::map<std::string, RawTensor>& table, const std::string& name) {
  auto it = table.find(name);
  require(it != table.end() && it->second.dtype == kDtypeU64 && it->second.bytes.size() == 8, ErrorKind::Integrity,
          "checkpoint lacks " + name);
  std::uint64_t v;
  std::memcpy(&v, it->second.bytes.data(), 8);
  return v;
}

template <typename S>
void copy_tensor(const std::map<std::string, RawTensor>& table, const std::string& name, std::vector<S>& dst) {
  auto it = table.find(name);
  require(it != table.end(), ErrorKind::Integrity, "checkpoint lacks tensor " + name);
  require(it->second.dtype == dtype_code<S>() && it->second.bytes.size() == dst.size() * sizeof(S),
          ErrorKind::Integrity, "tensor " + name + " has the wrong dtype or size");
  std::memcpy(dst.data(), it->second.bytes.data(), it->second.bytes.size());
}

}  // namespace detail

/// Reads the network configuration stored in a checkpoint.
inline UNetConfig checkpoint_config(const std::vector<std::uint8_t>& bytes) {
  const auto table = parse_checkpoint(bytes);
  return {detail::scalar_u64(table, "meta.in_channels"), detail::scalar_u64(table, "meta.stem_channels")};
}

/// Restores into an existing model; its configuration must match the stored digest.
template <typename S>
void restore_checkpoint(const std::vector<std::uint8_t>& bytes, UNet<S>& model, AdamState<S>& opt) {
  const auto table = parse_checkpoint(bytes);
  const auto digest = detail::scalar_u64(table, "meta.config_digest");
  require(digest == model.config().template digest<S>(), ErrorKind::Configuration,
          "checkpoint was written for a different network configuration or precision");
  const auto& params = model.parameters();
  opt.bind(params);
  opt.step = detail::scalar_u64(table, "meta.step");
  for (std::size_t k = 0; k < params.size(); ++k) {
    detail::copy_tensor(table, params[k]->name, params[k]->value);
    detail::copy_tensor(table, "adam.m." + params[k]->name, opt.m[k]);
    detail::copy_tensor(table, "adam.v." + params[k]->name, opt.v[k]);
  }
  for (const auto& b : model.buffers()) detail::copy_tensor(table, b.name, *b.values);
}

template <typename S>
void save_checkpoint(UNet<S>& model, const AdamState<S>& opt, const std::string& path) {
  write_file(path, serialize_checkpoint(model, opt));
}

template <typename S>
struct LoadedModel {
  std::unique_ptr<UNet<S>> model;
  AdamState<S> opt;
};

template <typename S>
LoadedModel<S> load_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  LoadedModel<S> out;
  out.model = std::make_unique<UNet<S>>(checkpoint_config(bytes));
  restore_checkpoint(bytes, *out.model, out.opt);
  return out;
}

/// Loads into a model of known configuration; a different stored configuration is an error.
template <typename S>
void load_checkpoint(const std::string& path, UNet<S>& model, AdamState<S>& opt) {
  restore_checkpoint(read_file(path), model, opt);
}

}  // namespace albf::nn
