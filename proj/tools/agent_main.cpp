#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "cloudcap/agent/capture.hpp"
#include "cloudcap/agent/client.hpp"
#include "cloudcap/agent/errors.hpp"

namespace fs = std::filesystem;
using namespace cloudcap::agent;

namespace {

struct CaptureArgs {
  std::string input;
  std::string iface;
  double duration_s = 0;
  std::string protos;
  std::string out;
  CLI::Option* duration = nullptr;
};

struct ServerArgs {
  std::string server;
  int retries = 3;
  double backoff_base_s = 1.0;
  double interval_s = 1.0;
  double timeout_s = 120.0;
  bool insecure = false;
};

void add_capture_options(CLI::App& cmd, CaptureArgs& a) {
  auto* input = cmd.add_option("--input", a.input, "Existing pcap file to filter");
  auto* iface = cmd.add_option("--iface", a.iface, "Interface for the external sniffer");
  a.duration = cmd.add_option("--duration", a.duration_s, "Sniffer capture duration in seconds");
  input->excludes(iface)->excludes(a.duration);
  cmd.add_option("--proto", a.protos, "Comma separated subset of tcp,udp,icmp,dns,tls");
  cmd.add_option("--out", a.out, "Output pcap path")->required();
}

void add_server_option(CLI::App& cmd, ServerArgs& a) {
  cmd.add_option("--server", a.server, "Analysis service base URL")->envname("CLOUDCAP_SERVER")->required();
  cmd.add_flag("--insecure", a.insecure, "Do not verify the server's TLS certificate");
}

void add_upload_options(CLI::App& cmd, ServerArgs& a) {
  cmd.add_option("--retries", a.retries, "Retries after connection errors or 5xx answers")
      ->check(CLI::NonNegativeNumber);
  cmd.add_option("--backoff-base", a.backoff_base_s)->group("")->check(CLI::NonNegativeNumber);
}

void add_watch_options(CLI::App& cmd, ServerArgs& a) {
  cmd.add_option("--interval", a.interval_s, "Seconds between status polls")->check(CLI::PositiveNumber);
  cmd.add_option("--timeout", a.timeout_s, "Give up after this many seconds")->check(CLI::PositiveNumber);
}

CaptureSpec to_spec(const CaptureArgs& a) {
  CaptureSpec spec;
  if (!a.input.empty()) spec.input = a.input;
  spec.iface = a.iface;
  if (a.duration->count() > 0) spec.duration_s = a.duration_s;
  try {
    spec.protocols = parse_proto_filter(a.protos);
  } catch (const std::invalid_argument& e) {
    throw AgentError(ExitCode::usage, "Usage", e.what());
  }
  spec.output = a.out;
  return spec;
}

SnifferOptions sniffer_from_env() {
  SnifferOptions o;
  if (const char* cmd = std::getenv("CLOUDCAP_SNIFFER_CMD")) o.command_template = cmd;
  return o;
}

CaptureResult do_capture(const CaptureArgs& a) {
  const auto result = capture(to_spec(a), sniffer_from_env());
  if (result.truncated) {
    std::cerr << "warning: input ends in a partial record; kept the " << result.packets_in
              << " complete packets before it" << std::endl;
  }
  std::cerr << "wrote " << result.output.string() << ": " << result.packets_out << " of " << result.packets_in
            << " packets" << std::endl;
  return result;
}

std::string do_upload(const ServerArgs& a, const fs::path& file) {
  UploadOptions o;
  o.retries = a.retries;
  o.backoff_base_s = a.backoff_base_s;
  o.insecure = a.insecure;
  o.log = [](const std::string& line) { std::cerr << line << std::endl; };
  return upload(a.server, file, o);
}

WatchResult do_watch(const ServerArgs& a, const std::string& id, const fs::path& report) {
  WatchOptions o;
  o.interval_s = a.interval_s;
  o.timeout_s = a.timeout_s;
  o.insecure = a.insecure;
  auto result = watch(a.server, id, report, o);
  std::cout << "capture " << id << " complete: " << result.summary << "; report saved to "
            << result.report_path.string() << std::endl;
  return result;
}

fs::path report_next_to(const fs::path& pcap) {
  fs::path p = pcap;
  p.replace_extension(".report.json");
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cloudcap agent: capture, upload and follow packet captures"};
  app.require_subcommand(1);

  CaptureArgs capture_args;
  auto* capture_cmd = app.add_subcommand("capture", "Record with the sniffer or filter an existing pcap");
  add_capture_options(*capture_cmd, capture_args);

  ServerArgs upload_args;
  std::string upload_file;
  auto* upload_cmd = app.add_subcommand("upload", "Upload a pcap and print its capture id");
  add_server_option(*upload_cmd, upload_args);
  upload_cmd->add_option("--file", upload_file, "pcap to upload")->required();
  add_upload_options(*upload_cmd, upload_args);

  ServerArgs watch_args;
  std::string watch_id;
  std::string watch_report;
  auto* watch_cmd = app.add_subcommand("watch", "Wait for analysis and download the report");
  add_server_option(*watch_cmd, watch_args);
  watch_cmd->add_option("--id", watch_id, "Capture id")->required();
  watch_cmd->add_option("--report", watch_report, "Where to save the report (default <id>.report.json)");
  add_watch_options(*watch_cmd, watch_args);

  CaptureArgs run_capture;
  ServerArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "capture, upload and watch in one go");
  add_capture_options(*run_cmd, run_capture);
  add_server_option(*run_cmd, run_args);
  add_upload_options(*run_cmd, run_args);
  add_watch_options(*run_cmd, run_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (*capture_cmd) {
      do_capture(capture_args);
    } else if (*upload_cmd) {
      std::cout << do_upload(upload_args, upload_file) << std::endl;
    } else if (*watch_cmd) {
      do_watch(watch_args, watch_id, watch_report.empty() ? fs::path(watch_id + ".report.json") : fs::path(watch_report));
    } else if (*run_cmd) {
      const auto captured = do_capture(run_capture);
      const auto id = do_upload(run_args, captured.output);
      std::cout << id << std::endl;
      const auto result = do_watch(run_args, id, report_next_to(captured.output));
      if (result.total_packets != captured.packets_out) {
        std::cerr << "warning: server counted " << result.total_packets << " packets, the filtered file has "
                  << captured.packets_out << std::endl;
      }
    }
  } catch (const AgentError& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << std::endl;
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
