#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dshadow {

enum class ErrorKind {
  config,
  parse,
  stream,
  detection,
  dimension,
  not_found,
  range,
  missing_score,
  template_error,
  transport,
  protocol,
  numeric,
  io,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::parse: return "parse";
    case ErrorKind::stream: return "stream";
    case ErrorKind::detection: return "detection";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::range: return "range";
    case ErrorKind::missing_score: return "missing_score";
    case ErrorKind::template_error: return "template";
    case ErrorKind::transport: return "transport";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace dshadow
