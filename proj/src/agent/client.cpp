#include "cloudcap/agent/client.hpp"

#include <httplib.h>

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <thread>

#include "cloudcap/agent/errors.hpp"

namespace cloudcap::agent {
namespace fs = std::filesystem;
using clock = std::chrono::steady_clock;

namespace {

struct Endpoint {
  std::string origin;     // scheme://host[:port]
  std::string base_path;  // "" or "/prefix"
};

Endpoint parse_server(const std::string& url) {
  std::string text = url;
  if (text.find("://") == std::string::npos) text = "http://" + text;
  const auto scheme_end = text.find("://");
  const std::string scheme = text.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw AgentError(ExitCode::usage, "Usage", "unsupported server URL scheme '" + scheme + "'");
  }
  const auto slash = text.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = text.substr(0, slash);
  if (slash != std::string::npos) {
    e.base_path = text.substr(slash);
    while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
  }
  if (e.origin.size() <= scheme_end + 3) throw AgentError(ExitCode::usage, "Usage", "server URL has no host");
  return e;
}

std::unique_ptr<httplib::Client> make_client(const Endpoint& e, bool insecure) {
  auto client = std::make_unique<httplib::Client>(e.origin);
  if (!client->is_valid()) throw AgentError(ExitCode::usage, "Usage", "invalid server URL " + e.origin);
  client->enable_server_certificate_verification(!insecure);
  client->set_connection_timeout(std::chrono::seconds(5));
  return client;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AgentError(ExitCode::capture_error, "InvalidInput", "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string error_message(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    if (j.contains("error") && j.contains("message")) {
      return j["error"].get<std::string>() + ": " + j["message"].get<std::string>();
    }
  } catch (const nlohmann::json::exception&) {
  }
  return body;
}

template <typename Duration>
Duration clamp_positive(Duration d) {
  return d.count() < 1 ? Duration(1) : d;
}

}  // namespace

std::string upload(const std::string& server_url, const fs::path& pcap, const UploadOptions& options) {
  if (options.retries < 0) throw AgentError(ExitCode::usage, "Usage", "retries must not be negative");
  const Endpoint endpoint = parse_server(server_url);
  const std::string body = read_file(pcap);
  const httplib::Headers headers = {{"X-Filename", pcap.filename().string()}};

  std::string last_error;
  for (int attempt = 0;; ++attempt) {
    auto client = make_client(endpoint, options.insecure);
    client->set_read_timeout(std::chrono::seconds(120));
    client->set_write_timeout(std::chrono::seconds(120));
    auto res = client->Post(endpoint.base_path + "/api/v1/captures", headers, body, "application/octet-stream");
    if (res) {
      if (res->status == 201) {
        try {
          return nlohmann::json::parse(res->body).at("capture_id").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
          throw AgentError(ExitCode::upload_failed, "ServerRejected",
                           std::string("unexpected upload response: ") + e.what());
        }
      }
      if (res->status >= 400 && res->status < 500) {
        throw AgentError(ExitCode::upload_failed, "ServerRejected",
                         "server answered " + std::to_string(res->status) + ": " + error_message(res->body));
      }
      last_error = "server answered " + std::to_string(res->status);
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt >= options.retries) break;
    const double delay = options.backoff_base_s * std::pow(2.0, attempt);
    if (options.log) {
      options.log("upload attempt " + std::to_string(attempt + 1) + " failed (" + last_error + "); retrying in " +
                  std::to_string(delay) + " s");
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
  }
  throw AgentError(ExitCode::upload_failed, "UploadFailedAfterRetries",
                   "upload failed after " + std::to_string(options.retries + 1) + " attempts: " + last_error);
}

WatchResult watch(const std::string& server_url, const std::string& capture_id, const fs::path& report_path,
                  const WatchOptions& options) {
  if (!(options.interval_s > 0) || !(options.timeout_s > 0)) {
    throw AgentError(ExitCode::usage, "Usage", "interval and timeout must be positive");
  }
  const Endpoint endpoint = parse_server(server_url);
  const std::string base = endpoint.base_path + "/api/v1/captures/" + capture_id;
  const auto deadline =
      clock::now() + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(options.timeout_s));
  auto client = make_client(endpoint, options.insecure);

  auto remaining = [&] { return std::chrono::duration_cast<std::chrono::microseconds>(deadline - clock::now()); };
  auto timed_out = [&](const std::string& last) {
    return AgentError(ExitCode::timeout, "Timeout",
                      "capture " + capture_id + " not finished after " + std::to_string(options.timeout_s) +
                          " s" + (last.empty() ? "" : " (last status: " + last + ")"));
  };

  std::string last_status;
  for (;;) {
    if (remaining().count() <= 0) throw timed_out(last_status);
    client->set_read_timeout(clamp_positive(remaining()));
    client->set_connection_timeout(clamp_positive(std::min(remaining(), std::chrono::microseconds(5'000'000))));
    auto res = client->Get(base);
    if (res && res->status == 404) {
      throw AgentError(ExitCode::analysis_failed, "UnknownCapture", "server does not know capture " + capture_id);
    }
    if (res && res->status == 200) {
      const auto entry = nlohmann::json::parse(res->body, nullptr, false);
      if (!entry.is_discarded()) {
        last_status = entry.value("status", "");
        if (last_status == "failed") {
          const auto reason = entry["failure_reason"].is_string() ? entry["failure_reason"].get<std::string>()
                                                                  : std::string("no reason recorded");
          throw AgentError(ExitCode::analysis_failed, "AnalysisFailed", reason);
        }
        if (last_status == "complete") {
          client->set_read_timeout(clamp_positive(remaining()));
          auto report = client->Get(base + "/report");
          if (report && report->status == 200) {
            {
              std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
              out << report->body;
              if (!out) {
                throw AgentError(ExitCode::analysis_failed, "ReportNotSaved", "cannot write " + report_path.string());
              }
            }
            WatchResult result;
            result.status = last_status;
            result.report_path = report_path;
            result.summary = summarize_report(report->body);
            result.total_packets = nlohmann::json::parse(report->body)["summary"]["total_packets"].get<uint64_t>();
            return result;
          }
        }
      }
    }
    const auto pause = std::min<std::chrono::microseconds>(
        remaining(), std::chrono::duration_cast<std::chrono::microseconds>(
                         std::chrono::duration<double>(options.interval_s)));
    if (pause.count() > 0) std::this_thread::sleep_for(pause);
  }
}

std::string summarize_report(const std::string& report_json) {
  const auto j = nlohmann::json::parse(report_json);
  const auto& summary = j.at("summary");
  char line[256];
  std::string text;
  std::snprintf(line, sizeof line, "%llu packets over %.3f s",
                static_cast<unsigned long long>(summary.at("total_packets").get<uint64_t>()),
                summary.at("duration_s").get<double>());
  text = line;
  const auto& protocols = j.at("protocols");
  if (!protocols.empty()) {
    std::snprintf(line, sizeof line, ", top protocol %s (%.2f%%)",
                  protocols[0].at("name").get<std::string>().c_str(), protocols[0].at("percentage").get<double>());
    text += line;
  }
  return text;
}

}  // namespace cloudcap::agent
