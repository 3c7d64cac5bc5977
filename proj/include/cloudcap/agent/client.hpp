#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace cloudcap::agent {

struct UploadOptions {
  int retries = 3;
  double backoff_base_s = 1.0;  // delay before retry n is base * 2^(n-1)
  bool insecure = false;        // skip TLS certificate verification
  std::function<void(const std::string&)> log;
};

/// POSTs the pcap to {server}/api/v1/captures and returns the capture id.
/// Connection failures and 5xx responses are retried; 4xx responses are
/// final (ServerRejected). Both map to exit code 6.
std::string upload(const std::string& server_url, const std::filesystem::path& pcap, const UploadOptions& options);

struct WatchOptions {
  double interval_s = 1.0;
  double timeout_s = 120.0;
  bool insecure = false;
};

struct WatchResult {
  std::string status;
  std::filesystem::path report_path;
  uint64_t total_packets = 0;
  std::string summary;  // one line for the terminal
};

/// Polls the capture until it is complete or failed. On completion the
/// report is written to `report_path`. Throws AgentError as Timeout (5) or
/// AnalysisFailed (4).
WatchResult watch(const std::string& server_url, const std::string& capture_id,
                  const std::filesystem::path& report_path, const WatchOptions& options);

/// "<total> packets over <duration> s, top protocol <name> (<pct>%)".
std::string summarize_report(const std::string& report_json);

}  // namespace cloudcap::agent
