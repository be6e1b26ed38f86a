// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace keydyn {

// Error taxonomy shared by the library and the CLI. The CLI maps each kind
// to a distinct process exit status (see exit_code).
enum class ErrorKind {
  config,     // bad configuration or misuse of an API contract
  data,       // malformed/insufficient input data, incompatible files
  protocol,   // evaluation/training protocol preconditions violated
  numerical,  // non-finite values, divergence
  io,         // filesystem failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  // 0 is success; 1 is reserved for unexpected crashes.
  int exit_code() const {
    switch (kind_) {
      case ErrorKind::config:
        return 2;
      case ErrorKind::data:
      case ErrorKind::protocol:
        return 3;
      case ErrorKind::numerical:
        return 4;
      case ErrorKind::io:
        return 5;
    }
    return 1;
  }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};

// Checkpoint file with an unsupported format version or mismatched shapes.
struct IncompatibleCheckpoint : DataError {
  explicit IncompatibleCheckpoint(const std::string& w)
      : DataError("incompatible checkpoint: " + w) {}
};

// Checkpoint file whose payload fails validation (truncation, bad checksum).
struct CorruptCheckpoint : DataError {
  explicit CorruptCheckpoint(const std::string& w)
      : DataError("corrupt checkpoint: " + w) {}
};

struct ProtocolError : Error {
  explicit ProtocolError(const std::string& w)
      : Error(ErrorKind::protocol, w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w)
      : Error(ErrorKind::numerical, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};

}  // namespace keydyn
