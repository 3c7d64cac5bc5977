#pragma once

#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cloudcap/dissect.hpp"
#include "cloudcap/service/archive_index.hpp"
#include "cloudcap/service/config.hpp"
#include "cloudcap/service/job_queue.hpp"

namespace cloudcap::service {

struct UploadResult {
  std::string capture_id;
  Status status = Status::received;
};

struct PacketPage {
  uint64_t offset = 0;
  uint64_t limit = 0;
  uint64_t total = 0;
  std::vector<DissectedPacket> items;
};

inline constexpr uint64_t kDefaultPageLimit = 100;
inline constexpr uint64_t kMaxPageLimit = 1000;

nlohmann::json entry_to_json(const ArchiveEntry& e);
nlohmann::json page_to_json(const std::string& capture_id, const PacketPage& page);

/// The analysis engine: owns the data directory, the index and the job
/// queue. Request-facing methods throw ApiError.
///
/// Layout under data_dir: staging/{id}.pcap, archive/{id}/{raw.pcap,
/// report.json, packets.ndjson, flows.csv}, index.
class AnalysisService {
 public:
  /// Opens (or creates) the data directory and index, then re-enqueues
  /// every capture that had not reached a terminal state.
  explicit AnalysisService(ServiceConfig config);
  ~AnalysisService();
  AnalysisService(const AnalysisService&) = delete;
  AnalysisService& operator=(const AnalysisService&) = delete;

  UploadResult upload(std::string_view body, const std::string& original_name);

  /// Adopts a fully written upload temp file (inside staging_dir()).
  /// The file is consumed on success and on validation failure.
  UploadResult accept_staged(const std::filesystem::path& temp_file, const std::string& original_name);

  /// A fresh temp path inside the staging directory for streamed uploads.
  std::filesystem::path new_upload_temp() const;

  /// Moves the staged pcap into the archive and records size and checksum.
  /// Idempotent once the archive copy exists.
  std::filesystem::path ingest(const std::string& capture_id);

  /// Parse, dissect, summarize and aggregate; persists the three artifacts
  /// and returns the terminal status.
  Status run_analysis(const std::string& capture_id);

  std::vector<ArchiveEntry> list() const;
  ArchiveEntry status(const std::string& capture_id) const;
  std::string report(const std::string& capture_id) const;
  PacketPage packets(const std::string& capture_id, uint64_t offset, uint64_t limit) const;
  std::string flows(const std::string& capture_id, std::optional<double> idle_timeout_s,
                    std::optional<double> active_timeout_s) const;

  void wait_idle() { queue_->wait_idle(); }
  void shutdown();

  const ServiceConfig& config() const { return config_; }
  const ArchiveIndex& index() const { return *index_; }
  const JobQueue& queue() const { return *queue_; }
  std::filesystem::path staging_dir() const { return config_.data_dir / "staging"; }
  std::filesystem::path archive_dir(const std::string& capture_id) const {
    return config_.data_dir / "archive" / capture_id;
  }

 private:
  void process(const std::string& capture_id);
  ArchiveEntry require_entry(const std::string& capture_id) const;
  ArchiveEntry require_complete(const std::string& capture_id) const;
  std::shared_ptr<const std::vector<DissectedPacket>> summaries(const std::string& capture_id) const;
  void pause_between_stages() const;

  ServiceConfig config_;
  PortLabelTable ports_;
  std::unique_ptr<ArchiveIndex> index_;
  std::unique_ptr<JobQueue> queue_;

  // Parsed packets.ndjson of recently viewed complete captures.
  mutable std::mutex cache_mutex_;
  mutable std::list<std::pair<std::string, std::shared_ptr<const std::vector<DissectedPacket>>>> cache_;
};

}  // namespace cloudcap::service
