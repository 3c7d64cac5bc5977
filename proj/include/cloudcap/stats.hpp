#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloudcap/dissect.hpp"

namespace cloudcap {

/// An exact ratio shown as a percentage. Math stays on the integer counts;
/// rounding happens only when formatted.
struct Percentage {
  uint64_t part = 0;
  uint64_t whole = 0;

  double value() const { return whole == 0 ? 0.0 : 100.0 * part / whole; }
  /// Rounded half-up to two decimals, e.g. "33.33"; "0.00" when whole is 0.
  std::string fixed2() const;

  bool operator==(const Percentage&) const = default;
};

struct CaptureSummary {
  uint64_t total_packets = 0;
  uint64_t total_bytes = 0;
  std::optional<int64_t> first_ts_us;
  std::optional<int64_t> last_ts_us;
  int64_t duration_us = 0;

  bool operator==(const CaptureSummary&) const = default;
};

struct TlsShare {
  uint64_t tls_packets = 0;
  Percentage percentage;

  bool operator==(const TlsShare&) const = default;
};

struct HostShare {
  std::string address;
  uint64_t appearances = 0;
  Percentage percentage;

  bool operator==(const HostShare&) const = default;
};

struct ProtocolShare {
  std::string name;
  uint64_t packets = 0;
  Percentage percentage;

  bool operator==(const ProtocolShare&) const = default;
};

/// Lower-inclusive bins over frame length. The last edge stands for
/// infinity: one past the largest representable origlen.
inline constexpr std::array<uint64_t, 11> kFrameSizeEdges = {
    0, 20, 40, 80, 160, 320, 640, 1280, 2560, 5120, 4294967296ULL};

struct FrameSizeHistogram {
  std::array<uint64_t, 11> bin_edges = kFrameSizeEdges;
  std::array<uint64_t, 10> counts{};

  bool operator==(const FrameSizeHistogram&) const = default;
};

struct PacketsPerSecond {
  std::optional<int64_t> start_s;  // floor of the earliest timestamp
  std::vector<uint64_t> counts;

  bool operator==(const PacketsPerSecond&) const = default;
};

inline constexpr std::size_t kTopHosts = 10;
inline constexpr std::string_view kOtherHosts = "other";

struct AnalysisReport {
  std::string capture_id;
  std::string generated_at;
  bool truncated = false;
  CaptureSummary summary;
  TlsShare tls;
  std::vector<HostShare> hosts;
  std::vector<ProtocolShare> protocols;
  FrameSizeHistogram frame_sizes;
  PacketsPerSecond packets_per_second;

  bool operator==(const AnalysisReport&) const = default;
};

uint64_t total_packets(std::span<const DissectedPacket> packets);

/// Totals, byte count and time span. Timestamps need not be ordered.
CaptureSummary summarize(std::span<const DissectedPacket> packets);

/// Every IP packet adds one appearance to its source and one to its
/// destination; shares are over 2 * (IP packet count). The ten most frequent
/// hosts are listed (ties by address text), the rest fold into "other".
std::vector<HostShare> host_shares(std::span<const DissectedPacket> packets);

TlsShare tls_share(std::span<const DissectedPacket> packets);

/// Packets per protocol label, most frequent first, ties alphabetical.
std::vector<ProtocolShare> protocol_breakdown(std::span<const DissectedPacket> packets);

FrameSizeHistogram frame_size_histogram(std::span<const DissectedPacket> packets);

/// One-second buckets from floor(earliest) to floor(latest), empty ones included.
PacketsPerSecond packets_per_second(std::span<const DissectedPacket> packets);

AnalysisReport build_report(std::string capture_id, std::span<const DissectedPacket> packets,
                            bool truncated, int64_t generated_at_us);

/// Canonical JSON: keys in declaration order, percentages with two decimals,
/// durations with six. Identical reports serialize to identical bytes.
std::string to_json(const AnalysisReport& report);

}  // namespace cloudcap
