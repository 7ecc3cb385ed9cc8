#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ame {

enum class ErrorCode : int {
  ok = 0,
  io = 1,
  parse = 2,
  invalid_argument = 3,
  invalid_config = 4,
  shape_mismatch = 5,
  degenerate = 6,
  divergence = 7,
  version = 8,
  mismatch = 9,
  internal = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace ame
