#include "cloudcap/service/config.hpp"

#include <charconv>
#include <cstdlib>
#include <stdexcept>

namespace cloudcap::service {
namespace {

uint64_t parse_unsigned(const char* name, const std::string& text, uint64_t min, uint64_t max) {
  uint64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || value < min || value > max) {
    throw std::invalid_argument(std::string(name) + ": expected an integer in [" +
                                std::to_string(min) + ", " + std::to_string(max) + "], got '" +
                                text + "'");
  }
  return value;
}

}  // namespace

ServiceConfig ServiceConfig::from_lookup(
    const std::function<std::optional<std::string>(const char*)>& get) {
  ServiceConfig c;
  if (auto v = get("CLOUDCAP_BIND")) c.bind_host = *v;
  if (auto v = get("CLOUDCAP_PORT")) c.port = static_cast<int>(parse_unsigned("CLOUDCAP_PORT", *v, 0, 65535));
  if (auto v = get("CLOUDCAP_DATA_DIR")) c.data_dir = *v;
  if (auto v = get("CLOUDCAP_WORKERS")) {
    c.workers = static_cast<unsigned>(parse_unsigned("CLOUDCAP_WORKERS", *v, 1, 256));
  }
  if (auto v = get("CLOUDCAP_MAX_UPLOAD_MB")) {
    c.max_upload_bytes = parse_unsigned("CLOUDCAP_MAX_UPLOAD_MB", *v, 1, 1'000'000) * 1024 * 1024;
  }
  if (auto v = get("CLOUDCAP_TLS_CERT")) c.tls_cert = *v;
  if (auto v = get("CLOUDCAP_TLS_KEY")) c.tls_key = *v;
  if (auto v = get("CLOUDCAP_PORT_LABELS")) c.port_labels = *v;
  if (auto v = get("CLOUDCAP_STATIC_DIR")) c.static_dir = *v;
  if (auto v = get("CLOUDCAP_ANALYSIS_STAGE_DELAY_MS")) {
    c.stage_delay_ms =
        static_cast<unsigned>(parse_unsigned("CLOUDCAP_ANALYSIS_STAGE_DELAY_MS", *v, 0, 600'000));
  }
  if (c.tls_cert.empty() != c.tls_key.empty()) {
    throw std::invalid_argument("CLOUDCAP_TLS_CERT and CLOUDCAP_TLS_KEY must be set together");
  }
  return c;
}

ServiceConfig ServiceConfig::from_env() {
  return from_lookup([](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  });
}

}  // namespace cloudcap::service
