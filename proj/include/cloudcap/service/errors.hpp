#pragma once

#include <stdexcept>
#include <string>

namespace cloudcap::service {

/// A failure that maps onto an HTTP response: status code plus a stable
/// machine-readable error code ("UnknownId", "NotReady", ...).
class ApiError : public std::runtime_error {
 public:
  ApiError(int http_status, std::string code, const std::string& message)
      : std::runtime_error(message), http_status_(http_status), code_(std::move(code)) {}

  int http_status() const { return http_status_; }
  const std::string& code() const { return code_; }

 private:
  int http_status_;
  std::string code_;
};

/// The index file exists but cannot be trusted; the service must not start.
class CorruptIndex : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cloudcap::service
