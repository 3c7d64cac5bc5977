#include "cloudcap/service/analysis_service.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "cloudcap/capture.hpp"
#include "cloudcap/flow.hpp"
#include "cloudcap/packet_summary.hpp"
#include "cloudcap/pcap.hpp"
#include "cloudcap/stats.hpp"
#include "cloudcap/text_format.hpp"
#include "cloudcap/service/errors.hpp"
#include "cloudcap/service/storage.hpp"

namespace cloudcap::service {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kSummaryCacheSize = 4;
constexpr const char* kRawName = "raw.pcap";
constexpr const char* kReportName = "report.json";
constexpr const char* kPacketsName = "packets.ndjson";
constexpr const char* kFlowsName = "flows.csv";

std::string clean_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (static_cast<unsigned char>(c) >= 0x20 && c != 0x7f) out.push_back(c);
  }
  const auto slash = out.find_last_of("/\\");
  if (slash != std::string::npos) out = out.substr(slash + 1);
  if (out.size() > 255) out.resize(255);
  return out.empty() ? "upload.pcap" : out;
}

ApiError unknown_id(const std::string& id) {
  return ApiError(404, "UnknownId", "no capture with id '" + id + "'");
}

}  // namespace

nlohmann::json entry_to_json(const ArchiveEntry& e) {
  nlohmann::ordered_json j;
  j["capture_id"] = e.capture_id;
  j["original_name"] = e.original_name;
  j["uploaded_at"] = iso8601_utc_us(e.uploaded_at_us);
  j["pcap_bytes"] = e.pcap_bytes;
  j["packet_count"] = e.packet_count ? nlohmann::json(*e.packet_count) : nlohmann::json(nullptr);
  j["status"] = to_string(e.status);
  j["failure_reason"] = e.failure_reason ? nlohmann::json(*e.failure_reason) : nlohmann::json(nullptr);
  j["truncated"] = e.truncated;
  j["checksum_sha256"] = e.checksum ? nlohmann::json(*e.checksum) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json page_to_json(const std::string& capture_id, const PacketPage& page) {
  nlohmann::ordered_json items = nlohmann::ordered_json::array();
  for (const auto& p : page.items) {
    nlohmann::ordered_json item;
    item["index"] = p.index;
    item["timestamp"] = iso8601_utc_us(p.ts_us);
    item["src"] = p.src_addr;
    item["dst"] = p.dst_addr;
    item["protocol_label"] = p.protocol_label;
    item["frame_len"] = p.frame_len;
    item["payload_preview_hex"] = hex_encode(p.payload_preview);
    items.push_back(std::move(item));
  }
  nlohmann::ordered_json j;
  j["capture_id"] = capture_id;
  j["offset"] = page.offset;
  j["limit"] = page.limit;
  j["total"] = page.total;
  j["items"] = std::move(items);
  return j;
}

AnalysisService::AnalysisService(ServiceConfig config)
    : config_(std::move(config)),
      ports_(config_.port_labels.empty() ? PortLabelTable::defaults()
                                         : PortLabelTable::load(config_.port_labels)) {
  fs::create_directories(staging_dir());
  fs::create_directories(config_.data_dir / "archive");
  for (const auto& entry : fs::directory_iterator(staging_dir())) {
    // Half-received uploads never got an id; nothing refers to them.
    if (entry.path().extension() == ".part") fs::remove(entry.path());
  }
  index_ = std::make_unique<ArchiveIndex>(config_.data_dir / "index");
  queue_ = std::make_unique<JobQueue>(config_.workers, [this](const std::string& id) { process(id); });
  for (const auto& e : index_->unfinished()) queue_->enqueue(e.capture_id);
}

AnalysisService::~AnalysisService() { shutdown(); }

void AnalysisService::shutdown() {
  if (queue_) queue_->stop();
}

fs::path AnalysisService::new_upload_temp() const {
  return staging_dir() / (".upload-" + random_capture_id() + ".part");
}

UploadResult AnalysisService::upload(std::string_view body, const std::string& original_name) {
  if (body.empty()) throw ApiError(400, "EmptyBody", "request body is empty");
  if (body.size() > config_.max_upload_bytes) {
    throw ApiError(413, "BodyTooLarge",
                   "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
  }
  const fs::path temp = new_upload_temp();
  {
    std::ofstream out(temp, std::ios::binary);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw std::runtime_error("cannot write " + temp.string());
  }
  return accept_staged(temp, original_name);
}

UploadResult AnalysisService::accept_staged(const fs::path& temp, const std::string& original_name) {
  struct Cleanup {
    const fs::path& p;
    bool armed = true;
    ~Cleanup() {
      std::error_code ec;
      if (armed) fs::remove(p, ec);
    }
  } cleanup{temp};

  const uint64_t size = fs::file_size(temp);
  if (size == 0) throw ApiError(400, "EmptyBody", "request body is empty");
  if (size > config_.max_upload_bytes) {
    throw ApiError(413, "BodyTooLarge",
                   "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
  }
  {
    std::ifstream in(temp, std::ios::binary);
    std::array<uint8_t, pcap::kGlobalHeaderSize> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    try {
      pcap::parse_header(std::span<const uint8_t>(head.data(), static_cast<std::size_t>(in.gcount())));
    } catch (const pcap::PcapError& e) {
      throw ApiError(422, "NotPcap", e.what());
    }
  }

  std::string id = random_capture_id();
  while (index_->get(id)) id = random_capture_id();
  const fs::path staged = staging_dir() / (id + ".pcap");
  fsync_path(temp);
  fs::rename(temp, staged);
  cleanup.armed = false;
  fsync_path(staging_dir());

  ArchiveEntry entry;
  entry.capture_id = id;
  entry.original_name = clean_name(original_name);
  entry.uploaded_at_us = now_utc_us();
  entry.pcap_bytes = size;
  index_->insert(entry);
  queue_->enqueue(id);
  return {id, Status::received};
}

fs::path AnalysisService::ingest(const std::string& id) {
  const auto entry = index_->get(id);
  if (!entry) throw std::out_of_range("unknown capture id " + id);
  const fs::path dir = archive_dir(id);
  const fs::path raw = dir / kRawName;
  const fs::path staged = staging_dir() / (id + ".pcap");

  if (fs::exists(staged)) {
    fs::create_directories(dir);
    fs::rename(staged, raw);
    fsync_path(dir);
    fsync_path(dir.parent_path());
    fsync_path(staging_dir());
  } else if (!fs::exists(raw)) {
    const std::string reason = "StagingMissing: no staged file for " + id;
    if (!is_terminal(entry->status)) index_->mark_failed(id, reason);
    throw std::runtime_error(reason);
  }

  const uint64_t size = fs::file_size(raw);
  if (!entry->checksum || entry->pcap_bytes != size) index_->set_ingested(id, size, sha256_file(raw));
  return raw;
}

void AnalysisService::pause_between_stages() const {
  if (config_.stage_delay_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(config_.stage_delay_ms));
  }
}

Status AnalysisService::run_analysis(const std::string& id) {
  const auto entry = index_->get(id);
  if (!entry) throw std::out_of_range("unknown capture id " + id);
  if (is_terminal(entry->status)) return entry->status;
  index_->advance(id, Status::parsing);

  const fs::path dir = archive_dir(id);
  Dissector dissector(ports_);
  DissectedCapture cap;
  try {
    cap = dissect_capture(dir / kRawName, dissector);
  } catch (const pcap::PcapError& e) {
    const bool header_problem = e.code() == pcap::ErrorCode::UnknownMagic ||
                                e.code() == pcap::ErrorCode::UnsupportedVersion ||
                                e.code() == pcap::ErrorCode::TruncatedHeader;
    index_->mark_failed(id, header_problem ? std::string("not a pcap: ") + e.what() : e.what());
    return Status::failed;
  }
  if (cap.truncated && cap.packets.empty()) {
    index_->mark_failed(id, cap.truncation_detail);
    return Status::failed;
  }

  pause_between_stages();
  index_->mark_analyzing(id, cap.packets.size(), cap.truncated);

  const std::string report = to_json(build_report(id, cap.packets, cap.truncated, now_utc_us()));
  const std::string flows = export_flows_csv(aggregate(cap.packets));
  std::string ndjson;
  for (const auto& p : cap.packets) {
    ndjson += to_summary_line(p);
    ndjson += '\n';
  }

  pause_between_stages();
  write_file_atomic(dir / kPacketsName, ndjson);
  write_file_atomic(dir / kFlowsName, flows);
  write_file_atomic(dir / kReportName, report);
  index_->advance(id, Status::complete);
  return Status::complete;
}

void AnalysisService::process(const std::string& id) {
  try {
    ingest(id);
    run_analysis(id);
  } catch (const std::exception& e) {
    try {
      const auto entry = index_->get(id);
      if (entry && !is_terminal(entry->status)) index_->mark_failed(id, e.what());
    } catch (...) {
    }
  }
}

std::vector<ArchiveEntry> AnalysisService::list() const { return index_->scan(); }

ArchiveEntry AnalysisService::require_entry(const std::string& id) const {
  if (!is_capture_id(id)) throw unknown_id(id);
  auto entry = index_->get(id);
  if (!entry) throw unknown_id(id);
  return *entry;
}

ArchiveEntry AnalysisService::require_complete(const std::string& id) const {
  auto entry = require_entry(id);
  if (entry.status != Status::complete) {
    std::string message = "capture " + id + " is " + std::string(to_string(entry.status));
    if (entry.failure_reason) message += ": " + *entry.failure_reason;
    throw ApiError(409, "NotReady", message);
  }
  return entry;
}

ArchiveEntry AnalysisService::status(const std::string& id) const { return require_entry(id); }

std::string AnalysisService::report(const std::string& id) const {
  require_complete(id);
  return read_whole_file(archive_dir(id) / kReportName);
}

std::shared_ptr<const std::vector<DissectedPacket>> AnalysisService::summaries(const std::string& id) const {
  {
    std::lock_guard lock(cache_mutex_);
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->first == id) {
        cache_.splice(cache_.begin(), cache_, it);
        return cache_.front().second;
      }
    }
  }
  std::ifstream in(archive_dir(id) / kPacketsName, std::ios::binary);
  if (!in) throw std::runtime_error("packet summaries missing for " + id);
  auto packets = std::make_shared<const std::vector<DissectedPacket>>(read_summaries(in));
  std::lock_guard lock(cache_mutex_);
  cache_.emplace_front(id, packets);
  if (cache_.size() > kSummaryCacheSize) cache_.pop_back();
  return packets;
}

PacketPage AnalysisService::packets(const std::string& id, uint64_t offset, uint64_t limit) const {
  if (limit < 1 || limit > kMaxPageLimit) {
    throw ApiError(400, "BadPagination",
                   "limit must be between 1 and " + std::to_string(kMaxPageLimit));
  }
  require_complete(id);
  const auto all = summaries(id);
  PacketPage page;
  page.offset = offset;
  page.limit = limit;
  page.total = all->size();
  if (offset < all->size()) {
    const auto end = std::min<uint64_t>(all->size(), offset + limit);
    page.items.assign(all->begin() + static_cast<long>(offset), all->begin() + static_cast<long>(end));
  }
  return page;
}

std::string AnalysisService::flows(const std::string& id, std::optional<double> idle_timeout_s,
                                   std::optional<double> active_timeout_s) const {
  for (const auto& t : {idle_timeout_s, active_timeout_s}) {
    if (t && !(std::isfinite(*t) && *t > 0)) {
      throw ApiError(400, "NonPositiveTimeout", "timeouts must be positive numbers of seconds");
    }
    if (t && *t > kMaxTimeoutSeconds) {
      throw ApiError(400, "BadTimeout", "timeouts must not exceed 1e9 seconds");
    }
  }
  require_complete(id);
  const FlowTimeouts defaults;
  const FlowTimeouts wanted = FlowTimeouts::from_seconds(
      idle_timeout_s.value_or(static_cast<double>(defaults.idle_us) / 1e6),
      active_timeout_s.value_or(static_cast<double>(defaults.active_us) / 1e6));
  if (wanted.idle_us == defaults.idle_us && wanted.active_us == defaults.active_us) {
    return read_whole_file(archive_dir(id) / kFlowsName);
  }
  return export_flows_csv(aggregate(*summaries(id), wanted));
}

}  // namespace cloudcap::service
