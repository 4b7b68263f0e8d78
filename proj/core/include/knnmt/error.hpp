#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace knnmt {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  out_of_range,
  non_finite,
  numerical,
  format,
  truncated,
  dim_mismatch,
  io,
  config,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and tests)
// can tell a corrupt header from a truncated file without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace knnmt
