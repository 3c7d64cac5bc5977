#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cloudcap::pcap {

enum class ByteOrder { big, little };
enum class TsPrecision { micro, nano };

inline constexpr std::size_t kGlobalHeaderSize = 24;
inline constexpr std::size_t kRecordHeaderSize = 16;

// Magic values as the first four file bytes read big-endian.
inline constexpr uint32_t kMagicMicroBig = 0xA1B2C3D4;
inline constexpr uint32_t kMagicMicroLittle = 0xD4C3B2A1;
inline constexpr uint32_t kMagicNanoBig = 0xA1B23C4D;
inline constexpr uint32_t kMagicNanoLittle = 0x4D3CB2A1;
inline constexpr uint32_t kPcapngSectionHeader = 0x0A0D0D0A;

inline constexpr uint32_t kLinkEthernet = 1;
inline constexpr uint32_t kLinkRawIp = 101;
inline constexpr uint32_t kLinkLinuxSll = 113;

struct PcapHeader {
  uint32_t magic = kMagicMicroLittle;
  uint16_t version_major = 2;
  uint16_t version_minor = 4;
  int32_t thiszone = 0;
  uint32_t sigfigs = 0;
  uint32_t snaplen = 262144;
  uint32_t linktype = kLinkEthernet;
  ByteOrder byte_order = ByteOrder::little;
  TsPrecision ts_precision = TsPrecision::micro;

  bool operator==(const PcapHeader&) const = default;
};

struct PacketRecord {
  uint64_t index = 0;
  uint32_t ts_sec = 0;
  uint32_t ts_frac = 0;  // microseconds or nanoseconds, per the file precision
  uint32_t caplen = 0;
  uint32_t origlen = 0;
  std::vector<uint8_t> data;

  bool operator==(const PacketRecord&) const = default;
};

enum class ErrorCode {
  UnknownMagic,
  UnsupportedVersion,
  TruncatedHeader,
  TruncatedRecord,
  RecordViolatesSnaplen,
  InvalidRecord,
  Io,
};

const char* to_string(ErrorCode code);

class PcapError : public std::runtime_error {
 public:
  PcapError(ErrorCode code, const std::string& message, uint64_t records_read = 0);

  ErrorCode code() const noexcept { return code_; }
  // Complete records successfully read before the error.
  uint64_t records_read() const noexcept { return records_read_; }

 private:
  ErrorCode code_;
  uint64_t records_read_;
};

/// Builds a consistent header for new files.
PcapHeader make_header(uint32_t linktype, uint32_t snaplen = 262144,
                       ByteOrder order = ByteOrder::little,
                       TsPrecision precision = TsPrecision::micro);

/// Decodes the 24-byte global header. Byte order and timestamp precision come
/// from the magic; pcapng section headers are rejected with UnknownMagic.
PcapHeader parse_header(std::span<const uint8_t> bytes24);

std::array<uint8_t, kGlobalHeaderSize> encode_header(const PcapHeader& header);

/// Timestamp in microseconds since the epoch. Nanosecond fractions are
/// truncated toward zero.
int64_t timestamp_us(const PacketRecord& record, TsPrecision precision);

/// Streams records from a classic pcap file. Only the record being returned
/// is held in memory.
class Reader {
 public:
  /// Reads and validates the global header.
  explicit Reader(std::istream& in);

  const PcapHeader& header() const noexcept { return header_; }

  /// Next record, or nullopt exactly at end of input on a record boundary.
  /// Throws PcapError(TruncatedRecord) when a partial record remains.
  std::optional<PacketRecord> next();

  uint64_t records_read() const noexcept { return records_read_; }

 private:
  std::istream& in_;
  PcapHeader header_;
  uint64_t records_read_ = 0;
};

class Writer {
 public:
  /// Emits the global header immediately.
  Writer(std::ostream& out, const PcapHeader& header);

  /// Throws RecordViolatesSnaplen or InvalidRecord; nothing is written then.
  void write(const PacketRecord& record);

  uint64_t bytes_written() const noexcept { return bytes_written_; }

 private:
  std::ostream& out_;
  PcapHeader header_;
  uint64_t bytes_written_ = 0;
};

/// Writes a complete file. Returns the number of bytes written.
uint64_t write_pcap(const PcapHeader& header, std::span<const PacketRecord> packets,
                    std::ostream& sink);

/// Checks a record against the invariants of the owning file.
void validate_record(const PacketRecord& record, const PcapHeader& header);

}  // namespace cloudcap::pcap
