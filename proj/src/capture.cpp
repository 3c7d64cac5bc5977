#include "cloudcap/capture.hpp"

#include <fstream>

namespace cloudcap {

DissectedCapture dissect_capture(std::istream& in, Dissector& dissector) {
  pcap::Reader reader(in);
  DissectedCapture out;
  out.header = reader.header();
  try {
    while (auto record = reader.next()) {
      out.packets.push_back(
          dissector.dissect(*record, out.header.linktype, out.header.ts_precision));
    }
  } catch (const pcap::PcapError& e) {
    if (e.code() != pcap::ErrorCode::TruncatedRecord) throw;
    out.truncated = true;
    out.truncation_detail = e.what();
  }
  return out;
}

DissectedCapture dissect_capture(const std::filesystem::path& path, Dissector& dissector) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw pcap::PcapError(pcap::ErrorCode::Io, "cannot open " + path.string());
  return dissect_capture(in, dissector);
}

}  // namespace cloudcap
