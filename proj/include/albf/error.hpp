#pragma once

#include <stdexcept>
#include <string>

namespace albf {

enum class ErrorKind {
  Configuration,
  OutOfWindow,
  ShapeMismatch,
  Contract,
  Integrity,
  UnboundedFwhm,
  NonFinite,
  Sequencing,
  BadRound,
  UnknownCandidate,
  Io,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::OutOfWindow: return "out-of-window";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::UnboundedFwhm: return "unbounded-fwhm";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::Sequencing: return "sequencing";
    case ErrorKind::BadRound: return "bad-round";
    case ErrorKind::UnknownCandidate: return "unknown-candidate";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace albf
