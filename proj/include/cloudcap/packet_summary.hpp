#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "cloudcap/dissect.hpp"

namespace cloudcap {

/// One DissectedPacket as a single-line JSON object (no trailing newline).
/// Carries every field, so flows and pages can be rebuilt without the pcap.
std::string to_summary_line(const DissectedPacket& p);

/// Inverse of to_summary_line. Throws std::invalid_argument on malformed input.
DissectedPacket from_summary_line(std::string_view line);

std::vector<DissectedPacket> read_summaries(std::istream& in);

}  // namespace cloudcap
