#pragma once

#include <boost/crc.hpp>

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace albf {

// CRC-64/XZ.
using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0xFFFFFFFFFFFFFFFFULL,
                                 0xFFFFFFFFFFFFFFFFULL, true, true>;

inline std::uint64_t crc64(std::span<const std::uint8_t> bytes) {
  Crc64 crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

/// Incremental digest over plain-old-data fields, used for provenance and config ids.
class Digest {
 public:
  template <typename T>
  Digest& add(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    crc_.process_bytes(&v, sizeof v);
    return *this;
  }
  Digest& add_bytes(const void* p, std::size_t n) {
    crc_.process_bytes(p, n);
    return *this;
  }
  Digest& add(const std::string& s) {
    add(static_cast<std::uint64_t>(s.size()));
    return add_bytes(s.data(), s.size());
  }
  std::uint64_t value() const { return crc_.checksum(); }

 private:
  Crc64 crc_;
};

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace albf
