#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cloudcap/pcap.hpp"

namespace cloudcap {

enum class IpVersion : uint8_t { none = 0, v4 = 4, v6 = 6 };
enum class Transport : uint8_t { none, tcp, udp, icmp, icmpv6, other };

std::string_view to_string(Transport t);
std::optional<Transport> transport_from_string(std::string_view s);

namespace tcp_flag {
inline constexpr uint8_t kFin = 0x01;
inline constexpr uint8_t kSyn = 0x02;
inline constexpr uint8_t kRst = 0x04;
inline constexpr uint8_t kPsh = 0x08;
inline constexpr uint8_t kAck = 0x10;
inline constexpr uint8_t kUrg = 0x20;
}  // namespace tcp_flag

inline constexpr std::size_t kPayloadPreviewMax = 64;

struct DissectedPacket {
  uint64_t index = 0;
  int64_t ts_us = 0;
  uint32_t frame_len = 0;  // origlen
  std::string src_addr;
  std::string dst_addr;
  IpVersion ip_version = IpVersion::none;
  Transport transport = Transport::none;
  std::optional<uint16_t> src_port;
  std::optional<uint16_t> dst_port;
  uint8_t tcp_flags = 0;
  std::string protocol_label = "OTHER";
  bool is_tls = false;
  std::vector<uint8_t> payload_preview;

  bool operator==(const DissectedPacket&) const = default;
};

/// Port → application label lookup applied in both directions. A "TLS"
/// entry marks a TLS candidate port: it never labels a packet by itself,
/// it only enables flow-sticky TLS detection on empty segments.
class PortLabelTable {
 public:
  PortLabelTable() = default;

  /// 53 DNS, 80 HTTP, 443 TLS, 123 NTP, 5353 MDNS, 67/68 DHCP, 1900 SSDP.
  static PortLabelTable defaults();

  /// Parses "port,label" lines. Blank lines and '#' comments are ignored.
  /// Throws std::invalid_argument naming the offending line.
  static PortLabelTable parse(std::string_view text);
  static PortLabelTable load(const std::filesystem::path& path);

  void set(uint16_t port, std::string label);
  std::optional<std::string_view> lookup(uint16_t port) const;
  bool is_tls_candidate(uint16_t port) const;
  std::size_t size() const { return labels_.size(); }

 private:
  std::map<uint16_t, std::string> labels_;
};

/// What the layer decoders managed to establish about one frame; input to
/// protocol classification.
struct DecodedLayers {
  bool ethernet = false;            // an Ethernet II header was decoded
  std::optional<uint16_t> ethertype;  // from Ethernet or Linux cooked framing
  IpVersion ip_version = IpVersion::none;
  Transport transport = Transport::none;
  std::optional<uint16_t> src_port;
  std::optional<uint16_t> dst_port;
  bool is_tls = false;
};

/// Label by precedence: TLS, port-table label, transport name, IPV4/IPV6,
/// ethertype name, ETHERNET, OTHER.
std::string classify_protocol(const DecodedLayers& layers, const PortLabelTable& ports);

/// Heuristic TLS test on a TCP payload: a record header (content type 20-23,
/// major version 3, minor 0-4), or an empty segment on port 443 of a flow
/// that already produced a match.
bool detect_tls(std::span<const uint8_t> payload, bool port_443, bool flow_flagged);

/// Per-capture dissection state. Holds the flow-sticky TLS flags, so one
/// instance belongs to exactly one analysis job.
class Dissector {
 public:
  explicit Dissector(PortLabelTable ports = PortLabelTable::defaults());

  DissectedPacket dissect(const pcap::PacketRecord& record, uint32_t linktype,
                          pcap::TsPrecision precision = pcap::TsPrecision::micro);

  const PortLabelTable& ports() const { return ports_; }

 private:
  PortLabelTable ports_;
  std::unordered_set<std::string> tls_flows_;
};

}  // namespace cloudcap
