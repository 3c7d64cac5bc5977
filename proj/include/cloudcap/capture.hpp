#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "cloudcap/dissect.hpp"
#include "cloudcap/pcap.hpp"

namespace cloudcap {

struct DissectedCapture {
  pcap::PcapHeader header;
  std::vector<DissectedPacket> packets;
  bool truncated = false;
  std::string truncation_detail;  // empty unless truncated
};

/// Parses and dissects a whole capture. A trailing partial record ends the
/// capture with truncated set; every other pcap error propagates.
DissectedCapture dissect_capture(std::istream& in, Dissector& dissector);
DissectedCapture dissect_capture(const std::filesystem::path& path, Dissector& dissector);

}  // namespace cloudcap
