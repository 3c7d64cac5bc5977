#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloudcap/dissect.hpp"

namespace cloudcap {

/// Canonical bidirectional 5-tuple: (addr_lo, port_lo) sorts before
/// (addr_hi, port_hi) by address bytes, then port.
struct FlowKey {
  std::string addr_lo;
  std::string addr_hi;
  uint16_t port_lo = 0;
  uint16_t port_hi = 0;
  Transport transport = Transport::tcp;

  bool operator==(const FlowKey&) const = default;
};

struct FlowKeyHash {
  std::size_t operator()(const FlowKey& k) const noexcept;
};

enum class Initiator { lo_to_hi, hi_to_lo };

struct FlowRecord {
  uint64_t flow_id = 0;
  FlowKey key;
  Initiator initiator = Initiator::lo_to_hi;
  int64_t first_ts_us = 0;
  int64_t last_ts_us = 0;
  uint64_t fwd_packets = 0;
  uint64_t bwd_packets = 0;
  uint64_t fwd_bytes = 0;
  uint64_t bwd_bytes = 0;
  uint8_t tcp_flags = 0;
  bool is_tls = false;

  // Endpoints as seen from the initiator.
  const std::string& src_addr() const;
  uint16_t src_port() const;
  const std::string& dst_addr() const;
  uint16_t dst_port() const;

  bool operator==(const FlowRecord&) const = default;
};

inline constexpr double kMaxTimeoutSeconds = 1e9;

struct FlowTimeouts {
  int64_t idle_us = 15'000'000;
  int64_t active_us = 120'000'000;

  /// Throws std::invalid_argument unless both values are positive and at
  /// most kMaxTimeoutSeconds.
  static FlowTimeouts from_seconds(double idle_s, double active_s);
};

/// Canonical key for TCP/UDP packets; nullopt for everything else.
std::optional<FlowKey> flow_key(const DissectedPacket& p);

/// Groups packets (in file order) into flows. A packet opens a new flow when
/// the gap since its flow's last packet exceeds the idle timeout or the flow's
/// age exceeds the active timeout. TCP FIN/RST do not close flows. Output is
/// ordered by first timestamp, then flow_id.
std::vector<FlowRecord> aggregate(std::span<const DissectedPacket> packets,
                                  const FlowTimeouts& timeouts = {});

inline constexpr std::string_view kFlowCsvHeader =
    "flow_id,src_ip,src_port,dst_ip,dst_port,protocol,first_ts,last_ts,duration_s,"
    "fwd_packets,bwd_packets,fwd_bytes,bwd_bytes,tcp_flags_hex,is_tls";

void export_flows(std::span<const FlowRecord> flows, std::ostream& out);
std::string export_flows_csv(std::span<const FlowRecord> flows);

}  // namespace cloudcap
