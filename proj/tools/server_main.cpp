#include <signal.h>

#include <CLI11.hpp>
#include <iostream>

#include "cloudcap/service/analysis_service.hpp"
#include "cloudcap/service/errors.hpp"
#include "cloudcap/service/http_api.hpp"

using namespace cloudcap::service;

int main(int argc, char** argv) {
  CLI::App app{"cloudcap analysis service"};
  std::optional<int> port;
  std::optional<std::string> data_dir;
  std::optional<std::string> bind;
  app.add_option("--port", port, "TCP port (overrides CLOUDCAP_PORT; 0 picks a free port)");
  app.add_option("--data-dir", data_dir, "Data directory (overrides CLOUDCAP_DATA_DIR)");
  app.add_option("--bind", bind, "Bind address (overrides CLOUDCAP_BIND)");
  CLI11_PARSE(app, argc, argv);

  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    ServiceConfig config = ServiceConfig::from_env();
    if (port) config.port = *port;
    if (data_dir) config.data_dir = *data_dir;
    if (bind) config.bind_host = *bind;

    AnalysisService service(config);
    ApiServer server(service);
    const int bound = server.start();
    std::cout << "listening on " << (server.tls() ? "https://" : "http://") << config.bind_host << ":"
              << bound << std::endl;

    int sig = 0;
    sigwait(&signals, &sig);
    std::cerr << "shutting down" << std::endl;
    server.stop();
    service.shutdown();
  } catch (const CorruptIndex& e) {
    std::cerr << "refusing to start: index is corrupt: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
