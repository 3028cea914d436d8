#pragma once

#include <stdexcept>
#include <string>

namespace geoadapt {

/// Coarse failure category, used by the CLI to pick an exit code.
enum class ErrorCategory { config, data, numeric, starvation, validation, state };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::starvation: return "starvation";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::state: return "state";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorCategory::state, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorCategory::data, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCategory::numeric, w) {}
};
/// No usable pseudo-labels: every anchor lacked a positive or a negative.
struct StarvationError : Error {
  explicit StarvationError(const std::string& w) : Error(ErrorCategory::starvation, w) {}
};

/// Malformed file content. `position` is a byte offset or a 1-based line number.
struct ParseError : DataError {
  ParseError(const std::string& w, std::size_t position) : DataError(w), position(position) {}
  std::size_t position;
};

}  // namespace geoadapt
