#include "cloudcap/packet_summary.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>

#include "cloudcap/text_format.hpp"

namespace cloudcap {

using nlohmann::ordered_json;

std::string to_summary_line(const DissectedPacket& p) {
  ordered_json j;
  j["index"] = p.index;
  j["ts_us"] = p.ts_us;
  j["frame_len"] = p.frame_len;
  j["src"] = p.src_addr;
  j["dst"] = p.dst_addr;
  j["ip_version"] = static_cast<int>(p.ip_version);
  j["transport"] = to_string(p.transport);
  j["src_port"] = p.src_port ? ordered_json(*p.src_port) : ordered_json(nullptr);
  j["dst_port"] = p.dst_port ? ordered_json(*p.dst_port) : ordered_json(nullptr);
  j["tcp_flags"] = p.tcp_flags;
  j["label"] = p.protocol_label;
  j["is_tls"] = p.is_tls;
  j["payload_hex"] = hex_encode(p.payload_preview);
  return j.dump();
}

DissectedPacket from_summary_line(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    DissectedPacket p;
    p.index = j.at("index").get<uint64_t>();
    p.ts_us = j.at("ts_us").get<int64_t>();
    p.frame_len = j.at("frame_len").get<uint32_t>();
    p.src_addr = j.at("src").get<std::string>();
    p.dst_addr = j.at("dst").get<std::string>();
    const int ipv = j.at("ip_version").get<int>();
    if (ipv != 0 && ipv != 4 && ipv != 6) throw std::invalid_argument("bad ip_version");
    p.ip_version = static_cast<IpVersion>(ipv);
    const auto transport = transport_from_string(j.at("transport").get<std::string>());
    if (!transport) throw std::invalid_argument("bad transport");
    p.transport = *transport;
    if (!j.at("src_port").is_null()) p.src_port = j.at("src_port").get<uint16_t>();
    if (!j.at("dst_port").is_null()) p.dst_port = j.at("dst_port").get<uint16_t>();
    p.tcp_flags = j.at("tcp_flags").get<uint8_t>();
    p.protocol_label = j.at("label").get<std::string>();
    p.is_tls = j.at("is_tls").get<bool>();
    p.payload_preview = hex_decode(j.at("payload_hex").get<std::string>());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed packet summary: ") + e.what());
  }
}

std::vector<DissectedPacket> read_summaries(std::istream& in) {
  std::vector<DissectedPacket> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(from_summary_line(line));
  }
  return out;
}

}  // namespace cloudcap
