#pragma once

#include <stdexcept>
#include <string>

namespace ovlp {

enum class ErrorCode {
  InvalidArgument = 1,
  Io = 2,
  Parse = 3,
  DegenerateBatch = 4,
  Diverged = 5,
  ConfigMismatch = 6,
  GenerationFailed = 7,
  GradcheckFailed = 8,
};

// Single exception type for the core; the C boundary maps `code()` to a status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void reject(const std::string& what) {
  throw Error(ErrorCode::InvalidArgument, what);
}

}  // namespace ovlp
