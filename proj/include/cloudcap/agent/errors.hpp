#pragma once

#include <stdexcept>
#include <string>

namespace cloudcap::agent {

/// Process exit codes of the agent CLI.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  capture_error = 3,
  analysis_failed = 4,
  timeout = 5,
  upload_failed = 6,
};

/// An agent failure with a stable kind ("SnifferNotFound", "Timeout", ...)
/// and the exit code the CLI reports for it.
class AgentError : public std::runtime_error {
 public:
  AgentError(ExitCode exit_code, std::string kind, const std::string& message)
      : std::runtime_error(message), exit_code_(exit_code), kind_(std::move(kind)) {}

  ExitCode exit_code() const { return exit_code_; }
  const std::string& kind() const { return kind_; }

 private:
  ExitCode exit_code_;
  std::string kind_;
};

}  // namespace cloudcap::agent
