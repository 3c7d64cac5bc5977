#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace cloudcap::service {

struct ServiceConfig {
  std::string bind_host = "0.0.0.0";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "data";
  unsigned workers = 2;
  uint64_t max_upload_bytes = 100ull * 1024 * 1024;
  std::filesystem::path tls_cert;
  std::filesystem::path tls_key;
  std::filesystem::path port_labels;  // empty: built-in table
  std::filesystem::path static_dir;   // optional dashboard assets
  unsigned stage_delay_ms = 0;        // pause between analysis stages (testing aid)

  bool tls_enabled() const { return !tls_cert.empty() || !tls_key.empty(); }

  /// Reads CLOUDCAP_PORT, CLOUDCAP_DATA_DIR, CLOUDCAP_WORKERS,
  /// CLOUDCAP_MAX_UPLOAD_MB, CLOUDCAP_TLS_CERT, CLOUDCAP_TLS_KEY,
  /// CLOUDCAP_BIND, CLOUDCAP_PORT_LABELS, CLOUDCAP_STATIC_DIR and
  /// CLOUDCAP_ANALYSIS_STAGE_DELAY_MS. Throws std::invalid_argument on
  /// malformed values or a cert without a key (and vice versa).
  static ServiceConfig from_env();

  /// Same, with an injectable lookup for tests.
  static ServiceConfig from_lookup(const std::function<std::optional<std::string>(const char*)>& get);
};

}  // namespace cloudcap::service
