#pragma once

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "cloudcap/service/analysis_service.hpp"

namespace httplib {
class Server;
}

namespace cloudcap::service {

/// Installs the /api/v1 routes, /healthz, JSON error bodies and the upload
/// size limit on `server`.
void register_routes(httplib::Server& server, AnalysisService& service);

/// An HTTP or HTTPS server bound to the configured address, serving the API
/// on a background thread.
class ApiServer {
 public:
  explicit ApiServer(AnalysisService& service);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and starts listening. Returns the bound port. Throws
  /// std::runtime_error when the address cannot be bound or the TLS
  /// material cannot be loaded.
  int start();
  void stop();
  /// Blocks until the server stops.
  void wait();

  int port() const { return port_; }
  bool tls() const;

 private:
  AnalysisService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace cloudcap::service
