#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ivtik {

enum class ErrorKind {
  domain,
  configuration,
  shape,
  extent,
  density,
  input,
  numerical,
  degeneracy,
  precondition,
  bandwidth,
  infeasibility,
  choice,
  assumption,
  envelope,
  fit,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries one of the kinds above so
/// callers (and the CLI) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::shape: return "shape";
    case ErrorKind::extent: return "extent";
    case ErrorKind::density: return "density";
    case ErrorKind::input: return "input";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::degeneracy: return "degeneracy";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::bandwidth: return "bandwidth";
    case ErrorKind::infeasibility: return "infeasibility";
    case ErrorKind::choice: return "choice";
    case ErrorKind::assumption: return "assumption";
    case ErrorKind::envelope: return "envelope";
    case ErrorKind::fit: return "fit";
  }
  return "unknown";
}

}  // namespace ivtik
