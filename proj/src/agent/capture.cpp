#include "cloudcap/agent/capture.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cloudcap/agent/errors.hpp"
#include "cloudcap/pcap.hpp"

namespace cloudcap::agent {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kStderrTail = 2048;

AgentError capture_error(const std::string& kind, const std::string& message) {
  return AgentError(ExitCode::capture_error, kind, message);
}

AgentError usage_error(const std::string& message) { return AgentError(ExitCode::usage, "Usage", message); }

std::string replace_all(std::string text, std::string_view from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::string format_duration(double seconds) {
  if (seconds == std::floor(seconds)) return std::to_string(static_cast<long long>(seconds));
  std::ostringstream out;
  out << seconds;
  return out.str();
}

std::optional<fs::path> resolve_program(const std::string& name) {
  if (name.find('/') != std::string::npos) {
    if (::access(name.c_str(), X_OK) == 0) return fs::path(name);
    return std::nullopt;
  }
  const char* path = std::getenv("PATH");
  std::istringstream dirs(path != nullptr ? path : "/usr/bin:/bin");
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    const fs::path candidate = fs::path(dir.empty() ? "." : dir) / name;
    if (::access(candidate.c_str(), X_OK) == 0 && !fs::is_directory(candidate)) return candidate;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(Proto p) {
  switch (p) {
    case Proto::tcp: return "tcp";
    case Proto::udp: return "udp";
    case Proto::icmp: return "icmp";
    case Proto::dns: return "dns";
    case Proto::tls: return "tls";
  }
  return "?";
}

std::set<Proto> parse_proto_filter(std::string_view text) {
  std::set<Proto> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    std::string word(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    word.erase(0, word.find_first_not_of(" \t"));
    word.erase(word.find_last_not_of(" \t") + 1);
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!word.empty()) {
      bool known = false;
      for (Proto p : {Proto::tcp, Proto::udp, Proto::icmp, Proto::dns, Proto::tls}) {
        if (word == to_string(p)) {
          out.insert(p);
          known = true;
        }
      }
      if (!known) {
        throw std::invalid_argument("unknown protocol '" + word + "' (expected tcp, udp, icmp, dns or tls)");
      }
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool matches(const DissectedPacket& packet, const std::set<Proto>& filter) {
  if (filter.empty()) return true;
  for (Proto p : filter) {
    switch (p) {
      case Proto::tcp:
        if (packet.transport == Transport::tcp) return true;
        break;
      case Proto::udp:
        if (packet.transport == Transport::udp) return true;
        break;
      case Proto::icmp:
        if (packet.transport == Transport::icmp || packet.transport == Transport::icmpv6) return true;
        break;
      case Proto::dns:
        if (packet.protocol_label == "DNS") return true;
        break;
      case Proto::tls:
        if (packet.is_tls) return true;
        break;
    }
  }
  return false;
}

std::string bpf_expression(const std::set<Proto>& filter) {
  std::string out;
  for (Proto p : filter) {
    if (!out.empty()) out += " or ";
    switch (p) {
      case Proto::tcp: out += "tcp"; break;
      case Proto::udp: out += "udp"; break;
      case Proto::icmp: out += "icmp or icmp6"; break;
      case Proto::dns: out += "port 53"; break;
      case Proto::tls: out += "tcp port 443"; break;
    }
  }
  return out;
}

void CaptureSpec::validate() const {
  if (output.empty()) throw usage_error("an output file is required");
  if (input) {
    if (input->empty()) throw usage_error("the input path is empty");
    if (!iface.empty() || duration_s) throw usage_error("file mode does not take an interface or a duration");
    std::error_code ec;
    if (fs::equivalent(*input, output, ec)) throw usage_error("input and output must be different files");
    return;
  }
  if (iface.empty() || !duration_s) throw usage_error("sniffer mode needs both an interface and a duration");
  if (!(*duration_s > 0) || !std::isfinite(*duration_s)) throw usage_error("the duration must be positive");
}

CaptureResult filter_capture(const fs::path& input, const fs::path& output, const std::set<Proto>& filter,
                             const PortLabelTable& ports) {
  std::ifstream in(input, std::ios::binary);
  if (!in) throw capture_error("InvalidInput", "cannot open " + input.string());

  std::optional<pcap::Reader> reader;
  try {
    reader.emplace(in);
  } catch (const pcap::PcapError& e) {
    throw capture_error("InvalidInput", input.string() + " is not a pcap file: " + e.what());
  }

  const fs::path temp = output.parent_path() / ("." + output.filename().string() + ".part");
  CaptureResult result;
  result.output = output;
  try {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw capture_error("InvalidInput", "cannot write " + temp.string());
    pcap::Writer writer(out, reader->header());
    Dissector dissector(ports);
    for (;;) {
      std::optional<pcap::PacketRecord> record;
      try {
        record = reader->next();
      } catch (const pcap::PcapError& e) {
        if (e.code() != pcap::ErrorCode::TruncatedRecord) {
          throw capture_error("InvalidInput", input.string() + ": " + e.what());
        }
        result.truncated = true;
        break;
      }
      if (!record) break;
      ++result.packets_in;
      const auto packet = dissector.dissect(*record, reader->header().linktype, reader->header().ts_precision);
      if (matches(packet, filter)) {
        writer.write(*record);
        ++result.packets_out;
      }
    }
    out.close();
    if (!out) throw capture_error("InvalidInput", "cannot write " + temp.string());
    fs::rename(temp, output);
  } catch (...) {
    std::error_code ec;
    fs::remove(temp, ec);
    throw;
  }
  return result;
}

std::vector<std::string> sniffer_argv(std::string_view command_template, const std::string& iface,
                                      const std::string& filter, const std::string& out, double duration_s) {
  std::vector<std::string> argv;
  std::istringstream words{std::string(command_template)};
  std::string word;
  while (words >> word) {
    word = replace_all(word, "{iface}", iface);
    word = replace_all(word, "{filter}", filter);
    word = replace_all(word, "{out}", out);
    word = replace_all(word, "{duration}", format_duration(duration_s));
    if (!word.empty()) argv.push_back(word);
  }
  return argv;
}

void run_sniffer(const SnifferOptions& options, const std::string& iface, const std::string& filter,
                 const fs::path& out, double duration_s) {
  if (options.command_template.empty()) {
    throw capture_error("SnifferNotFound", "no sniffer configured; set CLOUDCAP_SNIFFER_CMD");
  }
  const auto argv = sniffer_argv(options.command_template, iface, filter, out.string(), duration_s);
  if (argv.empty()) throw capture_error("SnifferNotFound", "CLOUDCAP_SNIFFER_CMD is blank");
  const auto program = resolve_program(argv[0]);
  if (!program) throw capture_error("SnifferNotFound", "sniffer program '" + argv[0] + "' not found");

  int pipe_fds[2];
  if (::pipe2(pipe_fds, O_CLOEXEC) != 0) throw capture_error("SnifferNonZeroExit", "cannot create a pipe");
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(pipe_fds[0]);
    ::close(pipe_fds[1]);
    throw capture_error("SnifferNonZeroExit", "cannot fork the sniffer");
  }
  if (pid == 0) {
    ::dup2(pipe_fds[1], STDERR_FILENO);
    ::dup2(pipe_fds[1], STDOUT_FILENO);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    ::execv(program->c_str(), args.data());
    ::_exit(127);
  }
  ::close(pipe_fds[1]);

  using clock = std::chrono::steady_clock;
  const auto deadline = clock::now() + std::chrono::milliseconds(static_cast<int64_t>(duration_s * 1000)) +
                        options.grace;
  std::optional<clock::time_point> kill_at;
  bool stopped = false;
  std::string tail;
  int status = 0;
  bool pipe_open = true;
  for (;;) {
    if (pipe_open) {
      pollfd pfd{pipe_fds[0], POLLIN, 0};
      if (::poll(&pfd, 1, 50) > 0) {
        char buf[4096];
        const ssize_t n = ::read(pipe_fds[0], buf, sizeof buf);
        if (n > 0) {
          tail.append(buf, static_cast<std::size_t>(n));
          if (tail.size() > kStderrTail) tail.erase(0, tail.size() - kStderrTail);
        } else if (n == 0) {
          pipe_open = false;
        }
      }
    } else {
      ::usleep(20'000);
    }
    const pid_t done = ::waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    const auto now = clock::now();
    if (!stopped && now >= deadline) {
      ::kill(pid, SIGTERM);
      stopped = true;
      kill_at = now + std::chrono::seconds(2);
    } else if (kill_at && now >= *kill_at) {
      ::kill(pid, SIGKILL);
      kill_at.reset();
    }
  }
  ::close(pipe_fds[0]);

  const bool clean_exit = WIFEXITED(status) && WEXITSTATUS(status) == 0;
  const bool watchdog_stop = stopped && WIFSIGNALED(status);
  if (!clean_exit && !watchdog_stop) {
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    throw capture_error("SnifferNonZeroExit", "sniffer exited with code " + std::to_string(code) +
                                                  (tail.empty() ? std::string() : ": " + tail));
  }
  if (!fs::exists(out)) {
    throw capture_error("SnifferNonZeroExit", "sniffer finished without writing " + out.string());
  }
}

CaptureResult capture(const CaptureSpec& spec, const SnifferOptions& sniffer) {
  spec.validate();
  if (!spec.sniffer_mode()) {
    if (!fs::exists(*spec.input)) throw capture_error("InvalidInput", spec.input->string() + " does not exist");
    return filter_capture(*spec.input, spec.output, spec.protocols);
  }
  const fs::path raw = spec.output.parent_path() / ("." + spec.output.filename().string() + ".raw");
  std::error_code ec;
  fs::remove(raw, ec);
  try {
    run_sniffer(sniffer, spec.iface, bpf_expression(spec.protocols), raw, *spec.duration_s);
    auto result = filter_capture(raw, spec.output, spec.protocols);
    fs::remove(raw, ec);
    return result;
  } catch (...) {
    fs::remove(raw, ec);
    throw;
  }
}

}  // namespace cloudcap::agent
