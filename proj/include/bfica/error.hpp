#pragma once

#include <stdexcept>
#include <string>

namespace bfica {

/// Machine-readable failure codes shared by the library, CLI and HTTP service.
enum class Errc {
  invalid_configuration,
  invalid_input,
  invalid_selection,
  out_of_domain,
  insufficient_sample,
  fit_singular,
  factorization,
  singular_smoother,
  degenerate_data,
  whitening_singular,
  metric_undefined,
  io,
};

/// Coarse category used for process exit codes and HTTP status mapping.
enum class ErrorKind { config, numeric, io };

inline const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_configuration: return "invalid_configuration";
    case Errc::invalid_input: return "invalid_input";
    case Errc::invalid_selection: return "invalid_selection";
    case Errc::out_of_domain: return "out_of_domain";
    case Errc::insufficient_sample: return "insufficient_sample";
    case Errc::fit_singular: return "fit_singular";
    case Errc::factorization: return "factorization";
    case Errc::singular_smoother: return "singular_smoother";
    case Errc::degenerate_data: return "degenerate_data";
    case Errc::whitening_singular: return "whitening_singular";
    case Errc::metric_undefined: return "metric_undefined";
    case Errc::io: return "io";
  }
  return "unknown";
}

inline ErrorKind kind_of(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_configuration:
    case Errc::invalid_input:
    case Errc::invalid_selection:
    case Errc::out_of_domain:
    case Errc::insufficient_sample:
      return ErrorKind::config;
    case Errc::io:
      return ErrorKind::io;
    default:
      return ErrorKind::numeric;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }

 private:
  Errc code_;
};

}  // namespace bfica
