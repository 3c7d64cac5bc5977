#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cloudcap/dissect.hpp"

namespace cloudcap::agent {

enum class Proto { tcp, udp, icmp, dns, tls };

std::string_view to_string(Proto p);

/// Parses a comma separated list such as "tcp,dns". Empty text means no
/// filter. Throws std::invalid_argument on unknown names.
std::set<Proto> parse_proto_filter(std::string_view text);

/// True when the packet belongs to any protocol in `filter` (or the filter
/// is empty). icmp covers ICMPv6; dns means the DNS label; tls means the
/// dissector flagged the packet as TLS.
bool matches(const DissectedPacket& packet, const std::set<Proto>& filter);

/// BPF expression handed to an external sniffer; empty for no filter.
std::string bpf_expression(const std::set<Proto>& filter);

struct CaptureSpec {
  std::optional<std::filesystem::path> input;  // file mode
  std::string iface;                           // sniffer mode
  std::optional<double> duration_s;            // sniffer mode
  std::set<Proto> protocols;
  std::filesystem::path output;

  bool sniffer_mode() const { return !input.has_value(); }
  /// Throws AgentError(usage) when the mode's required fields are missing
  /// or fields of the other mode are present.
  void validate() const;
};

struct CaptureResult {
  std::filesystem::path output;
  uint64_t packets_in = 0;
  uint64_t packets_out = 0;
  bool truncated = false;  // input ended in a partial record; prefix kept
};

/// Copies the packets of `input` that match `filter` into a new pcap at
/// `output`, preserving the global header. With an empty filter the output
/// is byte-identical to an intact input. Throws AgentError(capture_error,
/// "InvalidInput") when the input is not a classic pcap.
CaptureResult filter_capture(const std::filesystem::path& input, const std::filesystem::path& output,
                             const std::set<Proto>& filter, const PortLabelTable& ports = PortLabelTable::defaults());

/// Splits a CLOUDCAP_SNIFFER_CMD template into argv, substituting the
/// {iface}, {filter}, {out} and {duration} placeholders inside each
/// whitespace separated word.
std::vector<std::string> sniffer_argv(std::string_view command_template, const std::string& iface,
                                      const std::string& filter, const std::string& out, double duration_s);

struct SnifferOptions {
  std::string command_template;  // empty: SnifferNotFound
  /// Extra time after the requested duration before the sniffer is stopped.
  std::chrono::milliseconds grace{5000};
};

/// Runs the external sniffer until it exits or the duration watchdog stops
/// it. Throws AgentError(capture_error) as SnifferNotFound or
/// SnifferNonZeroExit.
void run_sniffer(const SnifferOptions& options, const std::string& iface, const std::string& filter,
                 const std::filesystem::path& out, double duration_s);

/// File mode filters the input; sniffer mode records to a temporary file
/// next to the output and then applies the same filter.
CaptureResult capture(const CaptureSpec& spec, const SnifferOptions& sniffer);

}  // namespace cloudcap::agent
