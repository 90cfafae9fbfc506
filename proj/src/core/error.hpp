#pragma once

#include <stdexcept>
#include <string>

namespace deid {

// Error taxonomy. Kinds map onto the process exit codes used by the CLI
// and the C API status values: config/dimension/input -> 2, protocol -> 3,
// numeric/training -> 4, io/version/checksum/truncated -> 5.
enum class ErrorKind {
  Config,
  Dimension,
  Input,
  Protocol,
  Numeric,
  Training,
  Io,
  Version,
  Checksum,
  Truncated,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int code() const {
    switch (kind_) {
      case ErrorKind::Config:
      case ErrorKind::Dimension:
      case ErrorKind::Input:
        return 2;
      case ErrorKind::Protocol:
        return 3;
      case ErrorKind::Numeric:
      case ErrorKind::Training:
        return 4;
      default:
        return 5;
    }
  }

  const char* kind_name() const {
    switch (kind_) {
      case ErrorKind::Config: return "config";
      case ErrorKind::Dimension: return "dimension";
      case ErrorKind::Input: return "input";
      case ErrorKind::Protocol: return "protocol";
      case ErrorKind::Numeric: return "numeric";
      case ErrorKind::Training: return "training";
      case ErrorKind::Io: return "io";
      case ErrorKind::Version: return "version";
      case ErrorKind::Checksum: return "checksum";
      case ErrorKind::Truncated: return "truncated";
    }
    return "unknown";
  }

 private:
  ErrorKind kind_;
};

}  // namespace deid
