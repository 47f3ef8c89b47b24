#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace best {

enum class ErrorKind {
  usage,
  config,
  dependency,
  data,
  schema,
  integrity,
  numeric,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::config: return "config";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::data: return "data";
    case ErrorKind::schema: return "schema";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

/// Process exit status for each error category.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return 64;
    case ErrorKind::config: return 65;
    case ErrorKind::dependency: return 66;
    case ErrorKind::data: return 67;
    case ErrorKind::schema: return 68;
    case ErrorKind::integrity: return 69;
    case ErrorKind::numeric: return 70;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Receives non-fatal diagnostics; prints to stderr unless replaced.
inline std::function<void(const std::string&)>& warning_handler() {
  static std::function<void(const std::string&)> h = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
  return h;
}

inline void warn(const std::string& message) {
  if (warning_handler()) warning_handler()(message);
}

}  // namespace best
