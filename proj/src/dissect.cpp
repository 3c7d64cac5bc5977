#include "cloudcap/dissect.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cloudcap {
namespace {

using Bytes = std::span<const uint8_t>;

constexpr uint16_t kEtherIpv4 = 0x0800;
constexpr uint16_t kEtherIpv6 = 0x86DD;
constexpr uint16_t kEtherVlan = 0x8100;

constexpr uint8_t kProtoIcmp = 1;
constexpr uint8_t kProtoTcp = 6;
constexpr uint8_t kProtoUdp = 17;
constexpr uint8_t kProtoIcmpv6 = 58;

constexpr uint8_t kIpv6HopByHop = 0;
constexpr uint8_t kIpv6Routing = 43;
constexpr uint8_t kIpv6Fragment = 44;
constexpr uint8_t kIpv6NoNext = 59;
constexpr uint8_t kIpv6DestOpts = 60;

uint16_t be16(Bytes b, std::size_t off) {
  return static_cast<uint16_t>((b[off] << 8) | b[off + 1]);
}

std::string_view ethertype_name(uint16_t type) {
  switch (type) {
    case 0x0806: return "ARP";
    case 0x8035: return "RARP";
    case 0x88CC: return "LLDP";
    case 0x888E: return "EAPOL";
    case 0x8863:
    case 0x8864: return "PPPOE";
    default: return {};
  }
}

std::string address_text(int family, const uint8_t* addr) {
  char buf[INET6_ADDRSTRLEN] = {};
  inet_ntop(family, addr, buf, sizeof buf);
  return buf;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Mutable decode state for one frame.
struct FrameDecode {
  DecodedLayers layers;
  DissectedPacket* out;
  Bytes payload;                 // payload of the highest decoded layer
  Bytes src_ip, dst_ip;          // raw address bytes, empty without IP
};

void decode_transport(FrameDecode& f, uint8_t proto, Bytes data) {
  f.payload = data;
  if (proto == kProtoTcp) {
    if (data.size() < 20) return;
    const std::size_t doff = static_cast<std::size_t>(data[12] >> 4) * 4;
    if (doff < 20 || data.size() < doff) return;
    f.layers.transport = Transport::tcp;
    f.layers.src_port = be16(data, 0);
    f.layers.dst_port = be16(data, 2);
    f.out->tcp_flags = data[13];
    f.payload = data.subspan(doff);
  } else if (proto == kProtoUdp) {
    if (data.size() < 8) return;
    f.layers.transport = Transport::udp;
    f.layers.src_port = be16(data, 0);
    f.layers.dst_port = be16(data, 2);
    f.payload = data.subspan(8);
  } else if ((proto == kProtoIcmp && f.layers.ip_version == IpVersion::v4) ||
             (proto == kProtoIcmpv6 && f.layers.ip_version == IpVersion::v6)) {
    if (data.size() < 4) return;
    f.layers.transport = proto == kProtoIcmp ? Transport::icmp : Transport::icmpv6;
    f.payload = data.subspan(std::min<std::size_t>(8, data.size()));
  } else {
    f.layers.transport = Transport::other;
  }
}

void decode_ipv4(FrameDecode& f, Bytes net) {
  if (net.size() < 20 || (net[0] >> 4) != 4) return;
  const std::size_t ihl = static_cast<std::size_t>(net[0] & 0x0F) * 4;
  if (ihl < 20 || net.size() < ihl) return;
  std::size_t end = be16(net, 2);
  if (end == 0) {
    end = net.size();  // segmentation offload leaves total length zero
  } else if (end < ihl) {
    return;
  }
  end = std::min(end, net.size());

  f.layers.ip_version = IpVersion::v4;
  f.src_ip = net.subspan(12, 4);
  f.dst_ip = net.subspan(16, 4);
  f.out->src_addr = address_text(AF_INET, net.data() + 12);
  f.out->dst_addr = address_text(AF_INET, net.data() + 16);

  const Bytes body = net.subspan(ihl, end - ihl);
  f.payload = body;
  const uint16_t frag_offset = be16(net, 6) & 0x1FFF;
  if (frag_offset != 0) return;  // transport header lives in the first fragment
  decode_transport(f, net[9], body);
}

void decode_ipv6(FrameDecode& f, Bytes net) {
  if (net.size() < 40 || (net[0] >> 4) != 6) return;
  const std::size_t plen = be16(net, 4);
  const std::size_t end = plen == 0 ? net.size() : std::min(net.size(), 40 + plen);

  f.layers.ip_version = IpVersion::v6;
  f.src_ip = net.subspan(8, 16);
  f.dst_ip = net.subspan(24, 16);
  f.out->src_addr = address_text(AF_INET6, net.data() + 8);
  f.out->dst_addr = address_text(AF_INET6, net.data() + 24);

  uint8_t next = net[6];
  std::size_t off = 40;
  f.payload = net.subspan(off, end - off);
  while (next == kIpv6HopByHop || next == kIpv6Routing || next == kIpv6DestOpts ||
         next == kIpv6Fragment) {
    if (end - off < 8) return;
    if (next == kIpv6Fragment) {
      const uint16_t frag_offset = be16(net, off + 2) >> 3;
      next = net[off];
      off += 8;
      f.payload = net.subspan(off, end - off);
      if (frag_offset != 0) return;
      continue;
    }
    const std::size_t len = (static_cast<std::size_t>(net[off + 1]) + 1) * 8;
    if (end - off < len) return;
    next = net[off];
    off += len;
    f.payload = net.subspan(off, end - off);
  }
  if (next == kIpv6NoNext) return;
  decode_transport(f, next, net.subspan(off, end - off));
}

// Canonical bidirectional identity of a TCP conversation for TLS stickiness.
std::string tls_flow_identity(Bytes src, uint16_t sport, Bytes dst, uint16_t dport) {
  auto endpoint = [](Bytes addr, uint16_t port) {
    std::string s(addr.begin(), addr.end());
    s.push_back(static_cast<char>(port >> 8));
    s.push_back(static_cast<char>(port & 0xFF));
    return s;
  };
  std::string a = endpoint(src, sport);
  std::string b = endpoint(dst, dport);
  if (b < a) std::swap(a, b);
  return a + '|' + b;
}

}  // namespace

std::string_view to_string(Transport t) {
  switch (t) {
    case Transport::none: return "none";
    case Transport::tcp: return "tcp";
    case Transport::udp: return "udp";
    case Transport::icmp: return "icmp";
    case Transport::icmpv6: return "icmpv6";
    case Transport::other: return "other";
  }
  return "none";
}

std::optional<Transport> transport_from_string(std::string_view s) {
  for (Transport t : {Transport::none, Transport::tcp, Transport::udp, Transport::icmp,
                      Transport::icmpv6, Transport::other}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

PortLabelTable PortLabelTable::defaults() {
  PortLabelTable t;
  t.set(53, "DNS");
  t.set(80, "HTTP");
  t.set(443, "TLS");
  t.set(123, "NTP");
  t.set(5353, "MDNS");
  t.set(67, "DHCP");
  t.set(68, "DHCP");
  t.set(1900, "SSDP");
  return t;
}

PortLabelTable PortLabelTable::parse(std::string_view text) {
  PortLabelTable t;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) {
      throw std::invalid_argument("port table line " + std::to_string(line_no) +
                                  ": expected \"port,label\"");
    }
    const std::string_view port_text = trim(line.substr(0, comma));
    const std::string_view label = trim(line.substr(comma + 1));
    unsigned port = 0;
    const auto [ptr, ec] =
        std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 65535) {
      throw std::invalid_argument("port table line " + std::to_string(line_no) +
                                  ": bad port \"" + std::string(port_text) + "\"");
    }
    if (label.empty()) {
      throw std::invalid_argument("port table line " + std::to_string(line_no) +
                                  ": empty label");
    }
    t.set(static_cast<uint16_t>(port), std::string(label));
  }
  return t;
}

PortLabelTable PortLabelTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open port table " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void PortLabelTable::set(uint16_t port, std::string label) { labels_[port] = std::move(label); }

std::optional<std::string_view> PortLabelTable::lookup(uint16_t port) const {
  const auto it = labels_.find(port);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

bool PortLabelTable::is_tls_candidate(uint16_t port) const {
  const auto label = lookup(port);
  return label && *label == "TLS";
}

std::string classify_protocol(const DecodedLayers& l, const PortLabelTable& ports) {
  if (l.is_tls) return "TLS";
  if (l.src_port && l.dst_port) {
    // Lower port wins when both ends carry a label.
    const uint16_t lo = std::min(*l.src_port, *l.dst_port);
    const uint16_t hi = std::max(*l.src_port, *l.dst_port);
    for (uint16_t port : {lo, hi}) {
      const auto label = ports.lookup(port);
      if (label && *label != "TLS") return std::string(*label);
    }
  }
  switch (l.transport) {
    case Transport::tcp: return "TCP";
    case Transport::udp: return "UDP";
    case Transport::icmp: return "ICMP";
    case Transport::icmpv6: return "ICMPV6";
    default: break;
  }
  if (l.ip_version == IpVersion::v4) return "IPV4";
  if (l.ip_version == IpVersion::v6) return "IPV6";
  if (l.ethertype) {
    const auto name = ethertype_name(*l.ethertype);
    if (!name.empty()) return std::string(name);
  }
  if (l.ethernet) return "ETHERNET";
  return "OTHER";
}

bool detect_tls(std::span<const uint8_t> payload, bool port_443, bool flow_flagged) {
  if (payload.size() >= 3) {
    return payload[0] >= 20 && payload[0] <= 23 && payload[1] == 0x03 && payload[2] <= 0x04;
  }
  return payload.empty() && port_443 && flow_flagged;
}

Dissector::Dissector(PortLabelTable ports) : ports_(std::move(ports)) {}

DissectedPacket Dissector::dissect(const pcap::PacketRecord& record, uint32_t linktype,
                                   pcap::TsPrecision precision) {
  DissectedPacket out;
  out.index = record.index;
  out.ts_us = pcap::timestamp_us(record, precision);
  out.frame_len = record.origlen;

  FrameDecode f;
  f.out = &out;
  const Bytes frame(record.data);
  f.payload = frame;

  Bytes net;
  std::optional<uint16_t> net_type;
  switch (linktype) {
    case pcap::kLinkEthernet:
      if (frame.size() >= 14) {
        f.layers.ethernet = true;
        uint16_t type = be16(frame, 12);
        std::size_t off = 14;
        if (type == kEtherVlan && frame.size() >= 18) {
          type = be16(frame, 16);
          off = 18;
        }
        f.layers.ethertype = type;
        net_type = type;
        net = frame.subspan(off);
        f.payload = net;
      }
      break;
    case pcap::kLinkLinuxSll:
      if (frame.size() >= 16) {
        const uint16_t type = be16(frame, 14);
        f.layers.ethertype = type;
        net_type = type;
        net = frame.subspan(16);
        f.payload = net;
      }
      break;
    case pcap::kLinkRawIp:
      if (!frame.empty()) {
        const unsigned version = frame[0] >> 4;
        if (version == 4) net_type = kEtherIpv4;
        if (version == 6) net_type = kEtherIpv6;
        net = frame;
      }
      break;
    default:
      break;  // unsupported link layer
  }

  if (net_type == kEtherIpv4) {
    decode_ipv4(f, net);
  } else if (net_type == kEtherIpv6) {
    decode_ipv6(f, net);
  }

  out.ip_version = f.layers.ip_version;
  out.transport = f.layers.transport;
  if (out.transport == Transport::tcp || out.transport == Transport::udp) {
    out.src_port = f.layers.src_port;
    out.dst_port = f.layers.dst_port;
  } else {
    f.layers.src_port.reset();
    f.layers.dst_port.reset();
    out.tcp_flags = 0;
  }

  if (out.transport == Transport::tcp) {
    const std::string identity =
        tls_flow_identity(f.src_ip, *out.src_port, f.dst_ip, *out.dst_port);
    const bool port_443 = *out.src_port == 443 || *out.dst_port == 443;
    const bool flagged = tls_flows_.contains(identity);
    out.is_tls = detect_tls(f.payload, port_443, flagged);
    if (out.is_tls && !flagged) tls_flows_.insert(identity);
  }
  f.layers.is_tls = out.is_tls;

  out.protocol_label = classify_protocol(f.layers, ports_);
  const std::size_t preview = std::min(kPayloadPreviewMax, f.payload.size());
  out.payload_preview.assign(f.payload.begin(), f.payload.begin() + preview);
  return out;
}

}  // namespace cloudcap
