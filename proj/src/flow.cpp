#include "cloudcap/flow.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "cloudcap/text_format.hpp"

namespace cloudcap {
namespace {

std::string address_bytes(const std::string& text) {
  unsigned char buf[16];
  if (inet_pton(AF_INET, text.c_str(), buf) == 1) return std::string(buf, buf + 4);
  if (inet_pton(AF_INET6, text.c_str(), buf) == 1) return std::string(buf, buf + 16);
  return text;
}

}  // namespace

std::size_t FlowKeyHash::operator()(const FlowKey& k) const noexcept {
  std::size_t h = std::hash<std::string>{}(k.addr_lo);
  h = h * 31 + std::hash<std::string>{}(k.addr_hi);
  h = h * 31 + (static_cast<std::size_t>(k.port_lo) << 16 | k.port_hi);
  return h * 31 + static_cast<std::size_t>(k.transport);
}

const std::string& FlowRecord::src_addr() const {
  return initiator == Initiator::lo_to_hi ? key.addr_lo : key.addr_hi;
}
uint16_t FlowRecord::src_port() const {
  return initiator == Initiator::lo_to_hi ? key.port_lo : key.port_hi;
}
const std::string& FlowRecord::dst_addr() const {
  return initiator == Initiator::lo_to_hi ? key.addr_hi : key.addr_lo;
}
uint16_t FlowRecord::dst_port() const {
  return initiator == Initiator::lo_to_hi ? key.port_hi : key.port_lo;
}

FlowTimeouts FlowTimeouts::from_seconds(double idle_s, double active_s) {
  if (!(idle_s > 0) || !(active_s > 0) || !std::isfinite(idle_s) || !std::isfinite(active_s)) {
    throw std::invalid_argument("flow timeouts must be positive");
  }
  if (idle_s > kMaxTimeoutSeconds || active_s > kMaxTimeoutSeconds) {
    throw std::invalid_argument("flow timeouts must not exceed " +
                                std::to_string(static_cast<int64_t>(kMaxTimeoutSeconds)) + " s");
  }
  FlowTimeouts t;
  t.idle_us = std::max<int64_t>(1, std::llround(idle_s * 1e6));
  t.active_us = std::max<int64_t>(1, std::llround(active_s * 1e6));
  return t;
}

std::optional<FlowKey> flow_key(const DissectedPacket& p) {
  if (p.transport != Transport::tcp && p.transport != Transport::udp) return std::nullopt;
  if (!p.src_port || !p.dst_port) return std::nullopt;
  FlowKey k;
  k.transport = p.transport;
  const auto src = std::make_pair(address_bytes(p.src_addr), *p.src_port);
  const auto dst = std::make_pair(address_bytes(p.dst_addr), *p.dst_port);
  if (dst < src) {
    k.addr_lo = p.dst_addr;
    k.port_lo = *p.dst_port;
    k.addr_hi = p.src_addr;
    k.port_hi = *p.src_port;
  } else {
    k.addr_lo = p.src_addr;
    k.port_lo = *p.src_port;
    k.addr_hi = p.dst_addr;
    k.port_hi = *p.dst_port;
  }
  return k;
}

std::vector<FlowRecord> aggregate(std::span<const DissectedPacket> packets,
                                  const FlowTimeouts& timeouts) {
  if (timeouts.idle_us <= 0 || timeouts.active_us <= 0) {
    throw std::invalid_argument("flow timeouts must be positive");
  }
  std::vector<FlowRecord> flows;
  std::unordered_map<FlowKey, std::size_t, FlowKeyHash> open;

  for (const auto& p : packets) {
    auto key = flow_key(p);
    if (!key) continue;
    const bool lo_to_hi = p.src_addr == key->addr_lo && *p.src_port == key->port_lo;
    const Initiator direction = lo_to_hi ? Initiator::lo_to_hi : Initiator::hi_to_lo;

    auto it = open.find(*key);
    if (it != open.end()) {
      const FlowRecord& f = flows[it->second];
      if (p.ts_us - f.last_ts_us > timeouts.idle_us ||
          p.ts_us - f.first_ts_us > timeouts.active_us) {
        open.erase(it);
        it = open.end();
      }
    }
    if (it == open.end()) {
      FlowRecord f;
      f.flow_id = flows.size();
      f.key = *key;
      f.initiator = direction;
      f.first_ts_us = p.ts_us;
      f.last_ts_us = p.ts_us;
      flows.push_back(std::move(f));
      it = open.emplace(std::move(*key), flows.size() - 1).first;
    }

    FlowRecord& f = flows[it->second];
    if (direction == f.initiator) {
      ++f.fwd_packets;
      f.fwd_bytes += p.frame_len;
    } else {
      ++f.bwd_packets;
      f.bwd_bytes += p.frame_len;
    }
    f.first_ts_us = std::min(f.first_ts_us, p.ts_us);
    f.last_ts_us = std::max(f.last_ts_us, p.ts_us);
    if (p.transport == Transport::tcp) f.tcp_flags |= p.tcp_flags;
    f.is_tls = f.is_tls || p.is_tls;
  }

  std::stable_sort(flows.begin(), flows.end(), [](const FlowRecord& a, const FlowRecord& b) {
    if (a.first_ts_us != b.first_ts_us) return a.first_ts_us < b.first_ts_us;
    return a.flow_id < b.flow_id;
  });
  return flows;
}

void export_flows(std::span<const FlowRecord> flows, std::ostream& out) {
  out << kFlowCsvHeader << '\n';
  for (const auto& f : flows) {
    char flags[8];
    std::snprintf(flags, sizeof flags, "0x%02x", f.tcp_flags);
    out << f.flow_id << ',' << f.src_addr() << ',' << f.src_port() << ',' << f.dst_addr() << ','
        << f.dst_port() << ',' << to_string(f.key.transport) << ','
        << iso8601_utc_us(f.first_ts_us) << ',' << iso8601_utc_us(f.last_ts_us) << ','
        << seconds_fixed6(f.last_ts_us - f.first_ts_us) << ',' << f.fwd_packets << ','
        << f.bwd_packets << ',' << f.fwd_bytes << ',' << f.bwd_bytes << ',' << flags << ','
        << (f.is_tls ? "true" : "false") << '\n';
  }
}

std::string export_flows_csv(std::span<const FlowRecord> flows) {
  std::ostringstream ss;
  export_flows(flows, ss);
  return ss.str();
}

}  // namespace cloudcap
