#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

struct sqlite3;

namespace cloudcap::service {

enum class Status { received, parsing, analyzing, complete, failed };

std::string_view to_string(Status s);
Status status_from_string(std::string_view s);
bool is_terminal(Status s);

struct ArchiveEntry {
  std::string capture_id;
  std::string original_name;
  int64_t uploaded_at_us = 0;
  uint64_t pcap_bytes = 0;
  std::optional<uint64_t> packet_count;
  Status status = Status::received;
  std::optional<std::string> failure_reason;
  bool truncated = false;
  std::optional<std::string> checksum;  // SHA-256 hex, set at ingest

  bool operator==(const ArchiveEntry&) const = default;
};

/// Persistent index of archive entries in a single SQLite file (WAL
/// journal). Every status change is appended to a transition log. All
/// methods are thread-safe.
class ArchiveIndex {
 public:
  /// Opens or creates the index. Throws CorruptIndex if the file is not a
  /// usable database or fails its integrity check.
  explicit ArchiveIndex(const std::filesystem::path& path);
  ~ArchiveIndex();
  ArchiveIndex(const ArchiveIndex&) = delete;
  ArchiveIndex& operator=(const ArchiveIndex&) = delete;

  /// Inserts a new entry; throws std::invalid_argument if the id exists.
  void insert(const ArchiveEntry& entry);
  std::optional<ArchiveEntry> get(std::string_view capture_id) const;
  /// Newest upload first; equal timestamps by capture_id ascending.
  std::vector<ArchiveEntry> scan() const;
  /// Entries not yet complete or failed, oldest upload first.
  std::vector<ArchiveEntry> unfinished() const;

  /// Moves an entry forward. Returns false (and changes nothing) when `to`
  /// is not ahead of the current status, which lets a recovered job replay
  /// its stages. Throws std::logic_error when the entry is already terminal
  /// or would reach analyzing/complete without a packet count (see
  /// mark_analyzing), and std::out_of_range for an unknown id.
  bool advance(std::string_view capture_id, Status to);

  /// Records the analysis outcome and moves to analyzing.
  bool mark_analyzing(std::string_view capture_id, uint64_t packet_count, bool truncated);
  bool mark_failed(std::string_view capture_id, const std::string& reason);
  void set_ingested(std::string_view capture_id, uint64_t pcap_bytes, const std::string& checksum);

  /// Every status the entry has held, in order.
  std::vector<Status> transitions(std::string_view capture_id) const;

 private:
  bool advance_locked(std::string_view capture_id, Status to,
                      const std::optional<std::string>& failure_reason);
  std::optional<ArchiveEntry> get_locked(std::string_view capture_id) const;

  sqlite3* db_ = nullptr;
  mutable std::mutex mutex_;
};

}  // namespace cloudcap::service
