#include "cloudcap/service/archive_index.hpp"

#include <sqlite3.h>

#include <stdexcept>

#include "cloudcap/service/errors.hpp"
#include "cloudcap/text_format.hpp"

namespace cloudcap::service {
namespace {

int rank(Status s) {
  switch (s) {
    case Status::received: return 0;
    case Status::parsing: return 1;
    case Status::analyzing: return 2;
    case Status::complete: return 3;
    case Status::failed: return 4;
  }
  return 0;
}

// Thin RAII wrapper over a prepared statement.
class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw std::runtime_error(std::string("index: ") + sqlite3_errmsg(db));
    }
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, std::string_view v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Stmt& bind_null(int i) {
    check(sqlite3_bind_null(stmt_, i));
    return *this;
  }
  template <typename T>
  Stmt& bind_opt(int i, const std::optional<T>& v) {
    if (!v) return bind_null(i);
    if constexpr (std::is_same_v<T, std::string>) {
      return bind(i, std::string_view(*v));
    } else {
      return bind(i, static_cast<int64_t>(*v));
    }
  }

  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw std::runtime_error(std::string("index: ") + sqlite3_errmsg(db_));
  }

  int64_t int_at(int col) const { return sqlite3_column_int64(stmt_, col); }
  bool null_at(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }
  std::string text_at(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? std::string(reinterpret_cast<const char*>(p)) : std::string();
  }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) throw std::runtime_error(std::string("index: ") + sqlite3_errmsg(db_));
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : sqlite3_errmsg(db);
    sqlite3_free(err);
    throw std::runtime_error("index: " + msg);
  }
}

constexpr const char* kColumns =
    "capture_id, original_name, uploaded_at, pcap_bytes, packet_count, status, failure_reason, "
    "truncated, checksum";

ArchiveEntry read_entry(const Stmt& s) {
  ArchiveEntry e;
  e.capture_id = s.text_at(0);
  e.original_name = s.text_at(1);
  e.uploaded_at_us = s.int_at(2);
  e.pcap_bytes = static_cast<uint64_t>(s.int_at(3));
  if (!s.null_at(4)) e.packet_count = static_cast<uint64_t>(s.int_at(4));
  e.status = status_from_string(s.text_at(5));
  if (!s.null_at(6)) e.failure_reason = s.text_at(6);
  e.truncated = s.int_at(7) != 0;
  if (!s.null_at(8)) e.checksum = s.text_at(8);
  return e;
}

// RAII transaction: rolls back unless committed.
class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { exec(db_, "BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    exec(db_, "COMMIT");
    done_ = true;
  }

 private:
  sqlite3* db_;
  bool done_ = false;
};

}  // namespace

std::string_view to_string(Status s) {
  switch (s) {
    case Status::received: return "received";
    case Status::parsing: return "parsing";
    case Status::analyzing: return "analyzing";
    case Status::complete: return "complete";
    case Status::failed: return "failed";
  }
  return "received";
}

Status status_from_string(std::string_view s) {
  if (s == "received") return Status::received;
  if (s == "parsing") return Status::parsing;
  if (s == "analyzing") return Status::analyzing;
  if (s == "complete") return Status::complete;
  if (s == "failed") return Status::failed;
  throw std::invalid_argument("unknown status '" + std::string(s) + "'");
}

bool is_terminal(Status s) { return s == Status::complete || s == Status::failed; }

ArchiveIndex::ArchiveIndex(const std::filesystem::path& path) {
  const int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
  if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw CorruptIndex("cannot open index " + path.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  try {
    exec(db_, "PRAGMA journal_mode=WAL");
    exec(db_, "PRAGMA synchronous=FULL");
    {
      Stmt check(db_, "PRAGMA quick_check");
      const std::string verdict = check.step() ? check.text_at(0) : "no result";
      if (verdict != "ok") throw std::runtime_error("integrity check failed: " + verdict);
    }
    exec(db_,
         "CREATE TABLE IF NOT EXISTS entries ("
         " capture_id TEXT PRIMARY KEY,"
         " original_name TEXT NOT NULL,"
         " uploaded_at INTEGER NOT NULL,"
         " pcap_bytes INTEGER NOT NULL,"
         " packet_count INTEGER,"
         " status TEXT NOT NULL,"
         " failure_reason TEXT,"
         " truncated INTEGER NOT NULL DEFAULT 0,"
         " checksum TEXT);"
         "CREATE INDEX IF NOT EXISTS entries_by_upload ON entries(uploaded_at DESC, capture_id);"
         "CREATE TABLE IF NOT EXISTS transitions ("
         " capture_id TEXT NOT NULL,"
         " seq INTEGER NOT NULL,"
         " status TEXT NOT NULL,"
         " at INTEGER NOT NULL,"
         " PRIMARY KEY (capture_id, seq));");
    // Every stored row must carry a known status, or later reads would fail.
    Stmt statuses(db_, "SELECT DISTINCT status FROM entries");
    while (statuses.step()) status_from_string(statuses.text_at(0));
  } catch (const std::exception& e) {
    sqlite3_close(db_);
    db_ = nullptr;
    throw CorruptIndex("index " + path.string() + " is unusable: " + e.what());
  }
}

ArchiveIndex::~ArchiveIndex() { sqlite3_close(db_); }

void ArchiveIndex::insert(const ArchiveEntry& e) {
  std::lock_guard lock(mutex_);
  if (get_locked(e.capture_id)) throw std::invalid_argument("duplicate capture id " + e.capture_id);
  Transaction tx(db_);
  Stmt s(db_,
         "INSERT INTO entries (capture_id, original_name, uploaded_at, pcap_bytes, packet_count, "
         "status, failure_reason, truncated, checksum) VALUES (?,?,?,?,?,?,?,?,?)");
  s.bind(1, e.capture_id)
      .bind(2, e.original_name)
      .bind(3, e.uploaded_at_us)
      .bind(4, static_cast<int64_t>(e.pcap_bytes))
      .bind_opt(5, e.packet_count)
      .bind(6, to_string(e.status))
      .bind_opt(7, e.failure_reason)
      .bind(8, int64_t{e.truncated})
      .bind_opt(9, e.checksum);
  s.step();
  Stmt log(db_, "INSERT INTO transitions (capture_id, seq, status, at) VALUES (?, 0, ?, ?)");
  log.bind(1, e.capture_id).bind(2, to_string(e.status)).bind(3, now_utc_us());
  log.step();
  tx.commit();
}

std::optional<ArchiveEntry> ArchiveIndex::get_locked(std::string_view id) const {
  Stmt s(db_, (std::string("SELECT ") + kColumns + " FROM entries WHERE capture_id = ?").c_str());
  s.bind(1, id);
  if (!s.step()) return std::nullopt;
  return read_entry(s);
}

std::optional<ArchiveEntry> ArchiveIndex::get(std::string_view id) const {
  std::lock_guard lock(mutex_);
  return get_locked(id);
}

std::vector<ArchiveEntry> ArchiveIndex::scan() const {
  std::lock_guard lock(mutex_);
  Stmt s(db_, (std::string("SELECT ") + kColumns +
                " FROM entries ORDER BY uploaded_at DESC, capture_id ASC")
                  .c_str());
  std::vector<ArchiveEntry> out;
  while (s.step()) out.push_back(read_entry(s));
  return out;
}

std::vector<ArchiveEntry> ArchiveIndex::unfinished() const {
  std::lock_guard lock(mutex_);
  Stmt s(db_, (std::string("SELECT ") + kColumns +
                " FROM entries WHERE status NOT IN ('complete', 'failed')"
                " ORDER BY uploaded_at ASC, capture_id ASC")
                  .c_str());
  std::vector<ArchiveEntry> out;
  while (s.step()) out.push_back(read_entry(s));
  return out;
}

bool ArchiveIndex::advance_locked(std::string_view id, Status to,
                                  const std::optional<std::string>& failure_reason) {
  const auto current = get_locked(id);
  if (!current) throw std::out_of_range("unknown capture id " + std::string(id));
  if (is_terminal(current->status)) {
    throw std::logic_error("capture " + std::string(id) + " is already " +
                           std::string(to_string(current->status)));
  }
  if (rank(to) <= rank(current->status)) return false;
  if ((to == Status::analyzing || to == Status::complete) && !current->packet_count) {
    throw std::logic_error("capture " + std::string(id) + " cannot become " + std::string(to_string(to)) +
                           " before its packet count is recorded");
  }

  Stmt s(db_, "UPDATE entries SET status = ?, failure_reason = ? WHERE capture_id = ?");
  s.bind(1, to_string(to)).bind_opt(2, failure_reason).bind(3, id);
  s.step();
  if (to == Status::failed) {
    Stmt clear(db_, "UPDATE entries SET packet_count = NULL WHERE capture_id = ?");
    clear.bind(1, id);
    clear.step();
  }
  Stmt log(db_,
           "INSERT INTO transitions (capture_id, seq, status, at) VALUES "
           "(?, (SELECT COALESCE(MAX(seq), -1) + 1 FROM transitions WHERE capture_id = ?), ?, ?)");
  log.bind(1, id).bind(2, id).bind(3, to_string(to)).bind(4, now_utc_us());
  log.step();
  return true;
}

bool ArchiveIndex::advance(std::string_view id, Status to) {
  std::lock_guard lock(mutex_);
  Transaction tx(db_);
  const bool changed = advance_locked(id, to, std::nullopt);
  tx.commit();
  return changed;
}

bool ArchiveIndex::mark_analyzing(std::string_view id, uint64_t packet_count, bool truncated) {
  std::lock_guard lock(mutex_);
  Transaction tx(db_);
  const auto current = get_locked(id);
  if (!current) throw std::out_of_range("unknown capture id " + std::string(id));
  if (!is_terminal(current->status)) {
    Stmt s(db_, "UPDATE entries SET packet_count = ?, truncated = ? WHERE capture_id = ?");
    s.bind(1, static_cast<int64_t>(packet_count)).bind(2, int64_t{truncated}).bind(3, id);
    s.step();
  }
  const bool changed = advance_locked(id, Status::analyzing, std::nullopt);
  tx.commit();
  return changed;
}

bool ArchiveIndex::mark_failed(std::string_view id, const std::string& reason) {
  std::lock_guard lock(mutex_);
  Transaction tx(db_);
  const bool changed = advance_locked(id, Status::failed, reason);
  tx.commit();
  return changed;
}

void ArchiveIndex::set_ingested(std::string_view id, uint64_t pcap_bytes, const std::string& checksum) {
  std::lock_guard lock(mutex_);
  Stmt s(db_, "UPDATE entries SET pcap_bytes = ?, checksum = ? WHERE capture_id = ?");
  s.bind(1, static_cast<int64_t>(pcap_bytes)).bind(2, checksum).bind(3, id);
  s.step();
  if (sqlite3_changes(db_) == 0) throw std::out_of_range("unknown capture id " + std::string(id));
}

std::vector<Status> ArchiveIndex::transitions(std::string_view id) const {
  std::lock_guard lock(mutex_);
  Stmt s(db_, "SELECT status FROM transitions WHERE capture_id = ? ORDER BY seq");
  s.bind(1, id);
  std::vector<Status> out;
  while (s.step()) out.push_back(status_from_string(s.text_at(0)));
  return out;
}

}  // namespace cloudcap::service
