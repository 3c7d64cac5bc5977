#include "cloudcap/pcap.hpp"

#include <algorithm>
#include <cstdio>

namespace cloudcap::pcap {
namespace {

// Records are read in slices so a corrupt caplen cannot force a large
// allocation before the stream runs dry.
constexpr std::size_t kReadSlice = 64 * 1024;

uint32_t load_u32(const uint8_t* p, ByteOrder order) {
  if (order == ByteOrder::big) {
    return (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) | (uint32_t{p[2]} << 8) | p[3];
  }
  return (uint32_t{p[3]} << 24) | (uint32_t{p[2]} << 16) | (uint32_t{p[1]} << 8) | p[0];
}

uint16_t load_u16(const uint8_t* p, ByteOrder order) {
  if (order == ByteOrder::big) return static_cast<uint16_t>((p[0] << 8) | p[1]);
  return static_cast<uint16_t>((p[1] << 8) | p[0]);
}

void store_u32(uint8_t* p, uint32_t v, ByteOrder order) {
  if (order == ByteOrder::big) {
    p[0] = static_cast<uint8_t>(v >> 24);
    p[1] = static_cast<uint8_t>(v >> 16);
    p[2] = static_cast<uint8_t>(v >> 8);
    p[3] = static_cast<uint8_t>(v);
  } else {
    p[3] = static_cast<uint8_t>(v >> 24);
    p[2] = static_cast<uint8_t>(v >> 16);
    p[1] = static_cast<uint8_t>(v >> 8);
    p[0] = static_cast<uint8_t>(v);
  }
}

void store_u16(uint8_t* p, uint16_t v, ByteOrder order) {
  if (order == ByteOrder::big) {
    p[0] = static_cast<uint8_t>(v >> 8);
    p[1] = static_cast<uint8_t>(v);
  } else {
    p[1] = static_cast<uint8_t>(v >> 8);
    p[0] = static_cast<uint8_t>(v);
  }
}

uint32_t magic_for(ByteOrder order, TsPrecision precision) {
  if (precision == TsPrecision::nano) {
    return order == ByteOrder::big ? kMagicNanoBig : kMagicNanoLittle;
  }
  return order == ByteOrder::big ? kMagicMicroBig : kMagicMicroLittle;
}

// Reads up to n bytes; returns the count actually read.
std::size_t read_some(std::istream& in, uint8_t* dst, std::size_t n) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount());
}

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownMagic: return "UnknownMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::RecordViolatesSnaplen: return "RecordViolatesSnaplen";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

PcapError::PcapError(ErrorCode code, const std::string& message, uint64_t records_read)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      records_read_(records_read) {}

PcapHeader make_header(uint32_t linktype, uint32_t snaplen, ByteOrder order,
                       TsPrecision precision) {
  PcapHeader h;
  h.magic = magic_for(order, precision);
  h.snaplen = snaplen;
  h.linktype = linktype;
  h.byte_order = order;
  h.ts_precision = precision;
  return h;
}

PcapHeader parse_header(std::span<const uint8_t> bytes) {
  if (bytes.size() < kGlobalHeaderSize) {
    throw PcapError(ErrorCode::TruncatedHeader,
                    "need 24 header bytes, got " + std::to_string(bytes.size()));
  }
  const uint8_t* p = bytes.data();
  PcapHeader h;
  h.magic = load_u32(p, ByteOrder::big);
  switch (h.magic) {
    case kMagicMicroBig:
      h.byte_order = ByteOrder::big;
      h.ts_precision = TsPrecision::micro;
      break;
    case kMagicMicroLittle:
      h.byte_order = ByteOrder::little;
      h.ts_precision = TsPrecision::micro;
      break;
    case kMagicNanoBig:
      h.byte_order = ByteOrder::big;
      h.ts_precision = TsPrecision::nano;
      break;
    case kMagicNanoLittle:
      h.byte_order = ByteOrder::little;
      h.ts_precision = TsPrecision::nano;
      break;
    case kPcapngSectionHeader:
      throw PcapError(ErrorCode::UnknownMagic,
                      "pcapng section header found; only classic pcap is supported");
    default: {
      char buf[16];
      std::snprintf(buf, sizeof buf, "0x%08X", h.magic);
      throw PcapError(ErrorCode::UnknownMagic, std::string("not a pcap file (magic ") + buf + ")");
    }
  }
  const ByteOrder o = h.byte_order;
  h.version_major = load_u16(p + 4, o);
  h.version_minor = load_u16(p + 6, o);
  h.thiszone = static_cast<int32_t>(load_u32(p + 8, o));
  h.sigfigs = load_u32(p + 12, o);
  h.snaplen = load_u32(p + 16, o);
  h.linktype = load_u32(p + 20, o);
  if (h.version_major != 2 || h.version_minor != 4) {
    throw PcapError(ErrorCode::UnsupportedVersion,
                    "version " + std::to_string(h.version_major) + "." +
                        std::to_string(h.version_minor) + " (expected 2.4)");
  }
  return h;
}

std::array<uint8_t, kGlobalHeaderSize> encode_header(const PcapHeader& h) {
  std::array<uint8_t, kGlobalHeaderSize> out{};
  const ByteOrder o = h.byte_order;
  store_u32(out.data(), magic_for(o, h.ts_precision), ByteOrder::big);
  store_u16(out.data() + 4, h.version_major, o);
  store_u16(out.data() + 6, h.version_minor, o);
  store_u32(out.data() + 8, static_cast<uint32_t>(h.thiszone), o);
  store_u32(out.data() + 12, h.sigfigs, o);
  store_u32(out.data() + 16, h.snaplen, o);
  store_u32(out.data() + 20, h.linktype, o);
  return out;
}

int64_t timestamp_us(const PacketRecord& r, TsPrecision precision) {
  const int64_t frac = precision == TsPrecision::nano ? r.ts_frac / 1000 : r.ts_frac;
  return static_cast<int64_t>(r.ts_sec) * 1'000'000 + frac;
}

namespace {

void check_record(const PacketRecord& r, const PcapHeader& h, uint64_t records_read) {
  if (r.caplen > h.snaplen) {
    throw PcapError(ErrorCode::RecordViolatesSnaplen,
                    "record " + std::to_string(r.index) + " caplen " + std::to_string(r.caplen) +
                        " exceeds snaplen " + std::to_string(h.snaplen),
                    records_read);
  }
  if (r.data.size() != r.caplen) {
    throw PcapError(ErrorCode::InvalidRecord,
                    "record " + std::to_string(r.index) + " holds " +
                        std::to_string(r.data.size()) + " bytes but caplen is " +
                        std::to_string(r.caplen),
                    records_read);
  }
  if (r.caplen > r.origlen) {
    throw PcapError(ErrorCode::InvalidRecord,
                    "record " + std::to_string(r.index) + " caplen " + std::to_string(r.caplen) +
                        " exceeds origlen " + std::to_string(r.origlen),
                    records_read);
  }
}

}  // namespace

void validate_record(const PacketRecord& r, const PcapHeader& h) { check_record(r, h, 0); }

Reader::Reader(std::istream& in) : in_(in) {
  std::array<uint8_t, kGlobalHeaderSize> buf{};
  const std::size_t got = read_some(in_, buf.data(), buf.size());
  header_ = parse_header(std::span<const uint8_t>(buf.data(), got));
}

std::optional<PacketRecord> Reader::next() {
  std::array<uint8_t, kRecordHeaderSize> hdr{};
  const std::size_t got = read_some(in_, hdr.data(), hdr.size());
  if (got == 0) return std::nullopt;
  if (got < kRecordHeaderSize) {
    throw PcapError(ErrorCode::TruncatedRecord,
                    "record " + std::to_string(records_read_) + " header has " +
                        std::to_string(got) + " of 16 bytes",
                    records_read_);
  }
  const ByteOrder o = header_.byte_order;
  PacketRecord r;
  r.index = records_read_;
  r.ts_sec = load_u32(hdr.data(), o);
  r.ts_frac = load_u32(hdr.data() + 4, o);
  r.caplen = load_u32(hdr.data() + 8, o);
  r.origlen = load_u32(hdr.data() + 12, o);

  std::size_t have = 0;
  while (have < r.caplen) {
    const std::size_t want = std::min<std::size_t>(kReadSlice, r.caplen - have);
    r.data.resize(have + want);
    const std::size_t n = read_some(in_, r.data.data() + have, want);
    have += n;
    if (n < want) {
      throw PcapError(ErrorCode::TruncatedRecord,
                      "record " + std::to_string(records_read_) + " has " +
                          std::to_string(have) + " of " + std::to_string(r.caplen) +
                          " data bytes",
                      records_read_);
    }
  }
  check_record(r, header_, records_read_);
  ++records_read_;
  return r;
}

Writer::Writer(std::ostream& out, const PcapHeader& header) : out_(out), header_(header) {
  const auto bytes = encode_header(header_);
  out_.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!out_) throw PcapError(ErrorCode::Io, "failed writing global header");
  bytes_written_ = bytes.size();
}

void Writer::write(const PacketRecord& r) {
  validate_record(r, header_);
  std::array<uint8_t, kRecordHeaderSize> hdr{};
  const ByteOrder o = header_.byte_order;
  store_u32(hdr.data(), r.ts_sec, o);
  store_u32(hdr.data() + 4, r.ts_frac, o);
  store_u32(hdr.data() + 8, r.caplen, o);
  store_u32(hdr.data() + 12, r.origlen, o);
  out_.write(reinterpret_cast<const char*>(hdr.data()), hdr.size());
  out_.write(reinterpret_cast<const char*>(r.data.data()),
             static_cast<std::streamsize>(r.data.size()));
  if (!out_) throw PcapError(ErrorCode::Io, "failed writing record " + std::to_string(r.index));
  bytes_written_ += hdr.size() + r.data.size();
}

uint64_t write_pcap(const PcapHeader& header, std::span<const PacketRecord> packets,
                    std::ostream& sink) {
  // Validate everything first so a bad record leaves no partial file behind.
  for (const auto& r : packets) validate_record(r, header);
  Writer w(sink, header);
  for (const auto& r : packets) w.write(r);
  return w.bytes_written();
}

}  // namespace cloudcap::pcap
