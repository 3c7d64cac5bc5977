#include "cloudcap/service/http_api.hpp"

#include <httplib.h>

#include <charconv>
#include <fstream>
#include <stdexcept>

#include "cloudcap/service/errors.hpp"

namespace cloudcap::service {
namespace {

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", code}, {"message", message}}.dump(), kJson);
}

std::string default_code(int status) {
  switch (status) {
    case 400: return "BadRequest";
    case 404: return "NotFound";
    case 405: return "MethodNotAllowed";
    case 413: return "BodyTooLarge";
    case 414: return "UriTooLong";
    case 416: return "RangeNotSatisfiable";
    default: return status >= 500 ? "Internal" : "HttpError";
  }
}

std::optional<uint64_t> query_unsigned(const httplib::Request& req, const char* name, const char* code) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string text = req.get_param_value(name);
  uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ApiError(400, code, std::string(name) + " must be a non-negative integer");
  }
  return value;
}

std::optional<double> query_seconds(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string text = req.get_param_value(name);
  double value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ApiError(400, "BadTimeout", std::string(name) + " must be a number of seconds");
  }
  return value;
}

}  // namespace

void register_routes(httplib::Server& server, AnalysisService& service) {
  server.set_payload_max_length(service.config().max_upload_bytes);
  // Without SO_REUSEPORT a second instance cannot silently share the port.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const ApiError& e) {
      send_error(res, e.http_status(), e.code(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    } catch (...) {
      send_error(res, 500, "Internal", "unexpected error");
    }
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, default_code(res.status), "request failed");
  });

  auto healthz = [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); };
  server.Get("/healthz", healthz);
  server.Get("/api/v1/healthz", healthz);

  server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Filename");
    res.status = 204;
  });

  server.Post("/api/v1/captures", [&service](const httplib::Request& req, httplib::Response& res,
                                             const httplib::ContentReader& content) {
    const uint64_t limit = service.config().max_upload_bytes;
    if (req.get_header_value_u64("Content-Length") > limit) {
      throw ApiError(413, "BodyTooLarge", "upload exceeds " + std::to_string(limit) + " bytes");
    }
    const auto temp = service.new_upload_temp();
    std::ofstream out(temp, std::ios::binary);
    uint64_t received = 0;
    bool too_large = false;
    const bool complete = content([&](const char* data, size_t len) {
      received += len;
      if (received > limit) {
        too_large = true;
        return false;
      }
      out.write(data, static_cast<std::streamsize>(len));
      return static_cast<bool>(out);
    });
    out.close();
    if (too_large || !complete || !out) {
      std::error_code ec;
      std::filesystem::remove(temp, ec);
      if (too_large) throw ApiError(413, "BodyTooLarge", "upload exceeds " + std::to_string(limit) + " bytes");
      throw ApiError(400, "IncompleteBody", "request body could not be read");
    }
    const std::string name = req.has_header("X-Filename") ? req.get_header_value("X-Filename") : "";
    const auto result = service.accept_staged(temp, name);
    res.status = 201;
    res.set_header("Location", "/api/v1/captures/" + result.capture_id);
    res.set_content(
        nlohmann::json{{"capture_id", result.capture_id}, {"status", to_string(result.status)}}.dump(), kJson);
  });

  server.Get("/api/v1/captures", [&service](const httplib::Request&, httplib::Response& res) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : service.list()) list.push_back(entry_to_json(e));
    res.set_content(list.dump(), kJson);
  });

  server.Get(R"(/api/v1/captures/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    res.set_content(entry_to_json(service.status(req.matches[1])).dump(), kJson);
  });

  server.Get(R"(/api/v1/captures/([^/]+)/report)", [&service](const httplib::Request& req,
                                                               httplib::Response& res) {
    res.set_content(service.report(req.matches[1]), kJson);
  });

  server.Get(R"(/api/v1/captures/([^/]+)/packets)", [&service](const httplib::Request& req,
                                                                httplib::Response& res) {
    const uint64_t offset = query_unsigned(req, "offset", "BadPagination").value_or(0);
    const uint64_t limit = query_unsigned(req, "limit", "BadPagination").value_or(kDefaultPageLimit);
    const std::string id = req.matches[1];
    res.set_content(page_to_json(id, service.packets(id, offset, limit)).dump(), kJson);
  });

  server.Get(R"(/api/v1/captures/([^/]+)/flows)", [&service](const httplib::Request& req,
                                                              httplib::Response& res) {
    const auto idle = query_seconds(req, "idle_timeout_s");
    const auto active = query_seconds(req, "active_timeout_s");
    const std::string id = req.matches[1];
    res.set_header("Content-Disposition", "attachment; filename=\"" + id + "-flows.csv\"");
    res.set_content(service.flows(id, idle, active), "text/csv");
  });

  if (!service.config().static_dir.empty()) {
    if (!server.set_mount_point("/", service.config().static_dir.string())) {
      throw std::runtime_error("static directory " + service.config().static_dir.string() +
                               " does not exist");
    }
  }
}

ApiServer::ApiServer(AnalysisService& service) : service_(service) {}

ApiServer::~ApiServer() { stop(); }

bool ApiServer::tls() const { return service_.config().tls_enabled(); }

int ApiServer::start() {
  const auto& cfg = service_.config();
  if (cfg.tls_enabled()) {
    auto ssl = std::make_unique<httplib::SSLServer>(cfg.tls_cert.c_str(), cfg.tls_key.c_str());
    if (!ssl->is_valid()) {
      throw std::runtime_error("cannot load TLS certificate " + cfg.tls_cert.string() + " / key " +
                               cfg.tls_key.string());
    }
    server_ = std::move(ssl);
  } else {
    server_ = std::make_unique<httplib::Server>();
  }
  register_routes(*server_, service_);

  if (cfg.port == 0) {
    port_ = server_->bind_to_any_port(cfg.bind_host);
  } else {
    port_ = server_->bind_to_port(cfg.bind_host, cfg.port) ? cfg.port : -1;
  }
  if (port_ < 0) {
    throw std::runtime_error("cannot listen on " + cfg.bind_host + ":" + std::to_string(cfg.port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  return port_;
}

void ApiServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void ApiServer::wait() {
  if (thread_.joinable()) thread_.join();
}

}  // namespace cloudcap::service
