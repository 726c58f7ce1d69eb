#pragma once

#include <stdexcept>
#include <string>

namespace actsparse {

enum class ErrorCode {
  InvalidArgument,
  Shape,
  Config,
  Io,
  BadMagic,
  VersionMismatch,
  Truncated,
  IndexInconsistent,
  HashMismatch,
  MissingRecord,
  Training,
  Evaluation,
  Capacity,
  Bounds,
  NoPrediction,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Shape: return "shape error";
    case ErrorCode::Config: return "config error";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::BadMagic: return "bad magic";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::Truncated: return "truncated file";
    case ErrorCode::IndexInconsistent: return "inconsistent index";
    case ErrorCode::HashMismatch: return "hash mismatch";
    case ErrorCode::MissingRecord: return "missing record";
    case ErrorCode::Training: return "training error";
    case ErrorCode::Evaluation: return "evaluation error";
    case ErrorCode::Capacity: return "capacity error";
    case ErrorCode::Bounds: return "out of bounds";
    case ErrorCode::NoPrediction: return "no prediction";
  }
  return "error";
}

// Every failure raised by the library carries a code so callers (and the CLI)
// can tell the failure classes apart without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace actsparse
