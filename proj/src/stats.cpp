#include "cloudcap/stats.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "cloudcap/text_format.hpp"

namespace cloudcap {
namespace {

int64_t floor_seconds(int64_t us) {
  int64_t s = us / 1'000'000;
  if (us % 1'000'000 != 0 && us < 0) --s;
  return s;
}

std::string json_string(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

}  // namespace

std::string Percentage::fixed2() const {
  if (whole == 0) return "0.00";
  const uint64_t hundredths = (20000 * part + whole) / (2 * whole);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%llu.%02llu", static_cast<unsigned long long>(hundredths / 100),
                static_cast<unsigned long long>(hundredths % 100));
  return buf;
}

uint64_t total_packets(std::span<const DissectedPacket> packets) { return packets.size(); }

CaptureSummary summarize(std::span<const DissectedPacket> packets) {
  CaptureSummary s;
  s.total_packets = packets.size();
  for (const auto& p : packets) {
    s.total_bytes += p.frame_len;
    s.first_ts_us = s.first_ts_us ? std::min(*s.first_ts_us, p.ts_us) : p.ts_us;
    s.last_ts_us = s.last_ts_us ? std::max(*s.last_ts_us, p.ts_us) : p.ts_us;
  }
  if (s.first_ts_us) s.duration_us = *s.last_ts_us - *s.first_ts_us;
  return s;
}

std::vector<HostShare> host_shares(std::span<const DissectedPacket> packets) {
  std::unordered_map<std::string, uint64_t> appearances;
  uint64_t ip_packets = 0;
  for (const auto& p : packets) {
    if (p.ip_version == IpVersion::none) continue;
    ++ip_packets;
    ++appearances[p.src_addr];
    ++appearances[p.dst_addr];
  }
  std::vector<HostShare> ranked;
  ranked.reserve(appearances.size());
  for (auto& [address, count] : appearances) ranked.push_back({address, count, {}});
  std::sort(ranked.begin(), ranked.end(), [](const HostShare& a, const HostShare& b) {
    if (a.appearances != b.appearances) return a.appearances > b.appearances;
    return a.address < b.address;
  });

  const uint64_t whole = 2 * ip_packets;
  std::vector<HostShare> out;
  uint64_t rest = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (i < kTopHosts) {
      ranked[i].percentage = {ranked[i].appearances, whole};
      out.push_back(std::move(ranked[i]));
    } else {
      rest += ranked[i].appearances;
    }
  }
  if (rest > 0) out.push_back({std::string(kOtherHosts), rest, {rest, whole}});
  return out;
}

TlsShare tls_share(std::span<const DissectedPacket> packets) {
  TlsShare t;
  t.tls_packets = static_cast<uint64_t>(
      std::count_if(packets.begin(), packets.end(), [](const auto& p) { return p.is_tls; }));
  t.percentage = {t.tls_packets, packets.size()};
  return t;
}

std::vector<ProtocolShare> protocol_breakdown(std::span<const DissectedPacket> packets) {
  std::map<std::string, uint64_t> counts;
  for (const auto& p : packets) ++counts[p.protocol_label];
  std::vector<ProtocolShare> out;
  out.reserve(counts.size());
  for (const auto& [name, n] : counts) out.push_back({name, n, {n, packets.size()}});
  // std::map iteration is already alphabetical; stable sort keeps that for ties.
  std::stable_sort(out.begin(), out.end(), [](const ProtocolShare& a, const ProtocolShare& b) {
    return a.packets > b.packets;
  });
  return out;
}

FrameSizeHistogram frame_size_histogram(std::span<const DissectedPacket> packets) {
  FrameSizeHistogram h;
  for (const auto& p : packets) {
    const auto upper = std::upper_bound(h.bin_edges.begin(), h.bin_edges.end(),
                                        static_cast<uint64_t>(p.frame_len));
    const auto bin = static_cast<std::size_t>(upper - h.bin_edges.begin()) - 1;
    ++h.counts[bin];
  }
  return h;
}

PacketsPerSecond packets_per_second(std::span<const DissectedPacket> packets) {
  PacketsPerSecond pps;
  if (packets.empty()) return pps;
  const auto [lo, hi] = std::minmax_element(
      packets.begin(), packets.end(), [](const auto& a, const auto& b) { return a.ts_us < b.ts_us; });
  const int64_t first = floor_seconds(lo->ts_us);
  const int64_t last = floor_seconds(hi->ts_us);
  pps.start_s = first;
  pps.counts.assign(static_cast<std::size_t>(last - first + 1), 0);
  for (const auto& p : packets) ++pps.counts[static_cast<std::size_t>(floor_seconds(p.ts_us) - first)];
  return pps;
}

AnalysisReport build_report(std::string capture_id, std::span<const DissectedPacket> packets,
                            bool truncated, int64_t generated_at_us) {
  AnalysisReport r;
  r.capture_id = std::move(capture_id);
  r.generated_at = iso8601_utc_us(generated_at_us);
  r.truncated = truncated;
  r.summary = summarize(packets);
  r.tls = tls_share(packets);
  r.hosts = host_shares(packets);
  r.protocols = protocol_breakdown(packets);
  r.frame_sizes = frame_size_histogram(packets);
  r.packets_per_second = packets_per_second(packets);
  return r;
}

std::string to_json(const AnalysisReport& r) {
  std::string out;
  out.reserve(1024 + 64 * (r.hosts.size() + r.protocols.size()) +
              8 * r.packets_per_second.counts.size());
  auto ts_or_null = [](const std::optional<int64_t>& us) {
    return us ? json_string(iso8601_utc_us(*us)) : std::string("null");
  };

  out += "{\"capture_id\":" + json_string(r.capture_id);
  out += ",\"generated_at\":" + json_string(r.generated_at);
  out += ",\"truncated\":";
  out += r.truncated ? "true" : "false";

  const auto& s = r.summary;
  out += ",\"summary\":{\"total_packets\":" + std::to_string(s.total_packets);
  out += ",\"total_bytes\":" + std::to_string(s.total_bytes);
  out += ",\"first_ts\":" + ts_or_null(s.first_ts_us);
  out += ",\"last_ts\":" + ts_or_null(s.last_ts_us);
  out += ",\"duration_s\":" + seconds_fixed6(s.duration_us) + "}";

  out += ",\"tls\":{\"tls_packets\":" + std::to_string(r.tls.tls_packets);
  out += ",\"percentage\":" + r.tls.percentage.fixed2() + "}";

  out += ",\"hosts\":[";
  for (std::size_t i = 0; i < r.hosts.size(); ++i) {
    const auto& h = r.hosts[i];
    if (i) out += ',';
    out += "{\"address\":" + json_string(h.address) + ",\"appearances\":" +
           std::to_string(h.appearances) + ",\"percentage\":" + h.percentage.fixed2() + "}";
  }
  out += "]";

  out += ",\"protocols\":[";
  for (std::size_t i = 0; i < r.protocols.size(); ++i) {
    const auto& p = r.protocols[i];
    if (i) out += ',';
    out += "{\"name\":" + json_string(p.name) + ",\"packets\":" + std::to_string(p.packets) +
           ",\"percentage\":" + p.percentage.fixed2() + "}";
  }
  out += "]";

  out += ",\"frame_sizes\":{\"bin_edges\":[";
  for (std::size_t i = 0; i < r.frame_sizes.bin_edges.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(r.frame_sizes.bin_edges[i]);
  }
  out += "],\"counts\":[";
  for (std::size_t i = 0; i < r.frame_sizes.counts.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(r.frame_sizes.counts[i]);
  }
  out += "]}";

  const auto& pps = r.packets_per_second;
  out += ",\"packets_per_second\":{\"start_ts\":";
  out += pps.start_s ? json_string(iso8601_utc_s(*pps.start_s)) : std::string("null");
  out += ",\"counts\":[";
  for (std::size_t i = 0; i < pps.counts.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(pps.counts[i]);
  }
  out += "]}}\n";
  return out;
}

}  // namespace cloudcap
