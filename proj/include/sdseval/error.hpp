// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sdseval {

enum class ErrorCode {
  InvalidArgument,
  Parse,
  Validation,
  Config,
  Provider,
  Client,
  Io,
};

/// Single exception type for the core library. The code drives the C API
/// status and the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace sdseval
