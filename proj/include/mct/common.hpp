#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace mct {

// Machine-readable failure category. Mirrors the C API status codes and the
// CLI exit codes, so a message never has to be parsed to route an error.
enum class ErrorCategory : int {
  config = 1,
  data = 2,
  shape = 3,
  io = 4,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}

  ErrorCategory category() const noexcept { return cat_; }

  static Error config(const std::string& msg) { return {ErrorCategory::config, msg}; }
  static Error data(const std::string& msg) { return {ErrorCategory::data, msg}; }
  static Error shape(const std::string& msg) { return {ErrorCategory::shape, msg}; }
  static Error io(const std::string& msg) { return {ErrorCategory::io, msg}; }

 private:
  ErrorCategory cat_;
};

inline const char* version_string() { return "mct 0.1.0"; }

}  // namespace mct
