#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "cloudcap/capture.hpp"
#include "cloudcap/flow.hpp"
#include "cloudcap/packet_summary.hpp"
#include "cloudcap/service/analysis_service.hpp"
#include "cloudcap/service/errors.hpp"
#include "cloudcap/service/storage.hpp"
#include "support/corpus.hpp"

using namespace cloudcap;
using namespace cloudcap::service;
using namespace cloudcap::testkit;

namespace {

ServiceConfig config_for(const fs::path& dir, unsigned stage_delay_ms = 0) {
  ServiceConfig c;
  c.bind_host = "127.0.0.1";
  c.port = 0;
  c.data_dir = dir;
  c.stage_delay_ms = stage_delay_ms;
  return c;
}

std::string file_text(const fs::path& p) { return read_text(p); }

ArchiveEntry sample_entry(const std::string& id, int64_t uploaded_at_us) {
  ArchiveEntry e;
  e.capture_id = id;
  e.original_name = "trace " + id + ".pcap";
  e.uploaded_at_us = uploaded_at_us;
  e.pcap_bytes = 1234;
  return e;
}

std::string hex_id(uint64_t n) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(n));
  return buf;
}

template <typename F>
void expect_api_error(F&& f, int status, const std::string& code) {
  try {
    f();
    ADD_FAILURE() << "expected ApiError " << code;
  } catch (const ApiError& e) {
    EXPECT_EQ(e.http_status(), status) << e.what();
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

std::size_t staging_files(const AnalysisService& s) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(s.staging_dir()), {}));
}

std::size_t csv_rows(const std::string& csv) {
  return static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
}

}  // namespace

// ---- configuration ----

TEST(Config, DefaultsWhenNothingIsSet) {
  const auto c = ServiceConfig::from_lookup([](const char*) { return std::nullopt; });
  EXPECT_EQ(c.port, 8080);
  EXPECT_EQ(c.data_dir, fs::path("data"));
  EXPECT_EQ(c.workers, 2u);
  EXPECT_EQ(c.max_upload_bytes, 100ull * 1024 * 1024);
  EXPECT_FALSE(c.tls_enabled());
  EXPECT_EQ(c.stage_delay_ms, 0u);
}

TEST(Config, ReadsEveryVariable) {
  const std::map<std::string, std::string> env = {
      {"CLOUDCAP_PORT", "9090"},          {"CLOUDCAP_DATA_DIR", "/srv/caps"},
      {"CLOUDCAP_WORKERS", "4"},          {"CLOUDCAP_MAX_UPLOAD_MB", "5"},
      {"CLOUDCAP_TLS_CERT", "c.pem"},     {"CLOUDCAP_TLS_KEY", "k.pem"},
      {"CLOUDCAP_BIND", "127.0.0.1"},     {"CLOUDCAP_ANALYSIS_STAGE_DELAY_MS", "250"},
      {"CLOUDCAP_STATIC_DIR", "/www"},    {"CLOUDCAP_PORT_LABELS", "ports.csv"}};
  const auto c = ServiceConfig::from_lookup([&](const char* k) -> std::optional<std::string> {
    auto it = env.find(k);
    if (it == env.end()) return std::nullopt;
    return it->second;
  });
  EXPECT_EQ(c.port, 9090);
  EXPECT_EQ(c.data_dir, fs::path("/srv/caps"));
  EXPECT_EQ(c.workers, 4u);
  EXPECT_EQ(c.max_upload_bytes, 5ull * 1024 * 1024);
  EXPECT_TRUE(c.tls_enabled());
  EXPECT_EQ(c.bind_host, "127.0.0.1");
  EXPECT_EQ(c.stage_delay_ms, 250u);
  EXPECT_EQ(c.static_dir, fs::path("/www"));
  EXPECT_EQ(c.port_labels, fs::path("ports.csv"));
}

TEST(Config, RejectsMalformedValues) {
  const std::vector<std::pair<std::string, std::string>> bad = {
      {"CLOUDCAP_PORT", "http"},        {"CLOUDCAP_PORT", "70000"}, {"CLOUDCAP_WORKERS", "0"},
      {"CLOUDCAP_WORKERS", "-1"},       {"CLOUDCAP_MAX_UPLOAD_MB", "0"},
      {"CLOUDCAP_MAX_UPLOAD_MB", "1.5"}, {"CLOUDCAP_TLS_CERT", "only-cert.pem"},
      {"CLOUDCAP_TLS_KEY", "only-key.pem"}};
  for (const auto& [key, value] : bad) {
    EXPECT_THROW(ServiceConfig::from_lookup([&](const char* k) -> std::optional<std::string> {
                   if (key == k) return value;
                   return std::nullopt;
                 }),
                 std::invalid_argument)
        << key << "=" << value;
  }
}

// ---- storage helpers ----

TEST(Storage, ChecksumsMatchSha256sumOutput) {
  const auto sums = corpus_checksums();
  ASSERT_EQ(sums.size(), corpus_files().size());
  for (const auto& f : corpus_files()) {
    EXPECT_EQ(sha256_file(f), sums.at(f.filename().string())) << f;
  }
}

TEST(Storage, AtomicWriteReplacesWithoutLeftovers) {
  TempDir dir;
  const auto target = dir / "report.json";
  write_file_atomic(target, "first");
  write_file_atomic(target, "second version");
  EXPECT_EQ(file_text(target), "second version");
  EXPECT_EQ(std::distance(fs::directory_iterator(dir.path()), {}), 1);
}

TEST(Storage, CaptureIdsAreSixteenHexAndDistinct) {
  std::set<std::string> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto id = random_capture_id();
    EXPECT_TRUE(is_capture_id(id)) << id;
    seen.insert(id);
  }
  EXPECT_EQ(seen.size(), 2000u);
  for (const char* bad : {"", "0123456789abcde", "0123456789abcdef0", "0123456789ABCDEF",
                          "0123456789abcdeg", "../../etc/passwd"}) {
    EXPECT_FALSE(is_capture_id(bad)) << bad;
  }
}

// ---- archive index ----

TEST(ArchiveIndex, FreshIndexIsEmpty) {
  TempDir dir;
  ArchiveIndex index(dir / "index");
  EXPECT_TRUE(index.scan().empty());
  EXPECT_FALSE(index.get("0000000000000000").has_value());
}

TEST(ArchiveIndex, EntrySurvivesReopen) {
  TempDir dir;
  ArchiveEntry e = sample_entry("00000000000000aa", 1'700'000'000'123'456);
  {
    ArchiveIndex index(dir / "index");
    index.insert(e);
    index.set_ingested(e.capture_id, 999, std::string(64, 'f'));
    index.advance(e.capture_id, Status::parsing);
    index.mark_analyzing(e.capture_id, 42, true);
  }
  ArchiveIndex reopened(dir / "index");
  const auto got = reopened.get(e.capture_id);
  ASSERT_TRUE(got.has_value());
  e.pcap_bytes = 999;
  e.checksum = std::string(64, 'f');
  e.status = Status::analyzing;
  e.packet_count = 42;
  e.truncated = true;
  EXPECT_EQ(*got, e);
  EXPECT_EQ(reopened.transitions(e.capture_id),
            (std::vector<Status>{Status::received, Status::parsing, Status::analyzing}));
}

TEST(ArchiveIndex, DuplicateInsertIsRejected) {
  TempDir dir;
  ArchiveIndex index(dir / "index");
  index.insert(sample_entry("00000000000000aa", 1));
  EXPECT_THROW(index.insert(sample_entry("00000000000000aa", 2)), std::invalid_argument);
  EXPECT_EQ(index.get("00000000000000aa")->uploaded_at_us, 1);
}

TEST(ArchiveIndex, ScanIsNewestFirstWithIdTieBreak) {
  TempDir dir;
  ArchiveIndex index(dir / "index");
  index.insert(sample_entry("00000000000000cc", 100));
  index.insert(sample_entry("00000000000000bb", 300));
  index.insert(sample_entry("00000000000000ff", 200));
  index.insert(sample_entry("00000000000000aa", 200));
  std::vector<std::string> ids;
  for (const auto& e : index.scan()) ids.push_back(e.capture_id);
  EXPECT_EQ(ids, (std::vector<std::string>{"00000000000000bb", "00000000000000aa", "00000000000000ff",
                                           "00000000000000cc"}));
}

TEST(ArchiveIndex, ThousandEntryScanIsSortedAndFast) {
  TempDir dir;
  ArchiveIndex index(dir / "index");
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) index.insert(sample_entry(hex_id(rng()), static_cast<int64_t>(rng() % 5000)));

  const auto start = std::chrono::steady_clock::now();
  const auto all = index.scan();
  const auto elapsed = std::chrono::steady_clock::now() - start;
  ASSERT_EQ(all.size(), 1000u);
  EXPECT_LT(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count(), 100);
  for (std::size_t i = 1; i < all.size(); ++i) {
    const auto& a = all[i - 1];
    const auto& b = all[i];
    EXPECT_TRUE(a.uploaded_at_us > b.uploaded_at_us ||
                (a.uploaded_at_us == b.uploaded_at_us && a.capture_id < b.capture_id));
  }
}

TEST(ArchiveIndex, AdvanceOnlyMovesForward) {
  TempDir dir;
  ArchiveIndex index(dir / "index");
  const std::string id = "0000000000000001";
  index.insert(sample_entry(id, 1));
  EXPECT_TRUE(index.advance(id, Status::parsing));
  EXPECT_FALSE(index.advance(id, Status::parsing));
  EXPECT_FALSE(index.advance(id, Status::received));
  EXPECT_TRUE(index.mark_analyzing(id, 10, false));
  EXPECT_FALSE(index.advance(id, Status::parsing));
  EXPECT_TRUE(index.advance(id, Status::complete));
  EXPECT_THROW(index.advance(id, Status::failed), std::logic_error);
  EXPECT_THROW(index.advance("ffffffffffffffff", Status::parsing), std::out_of_range);

  const std::string skipper = "0000000000000003";
  index.insert(sample_entry(skipper, 2));
  index.advance(skipper, Status::parsing);
  EXPECT_THROW(index.advance(skipper, Status::complete), std::logic_error);
  EXPECT_THROW(index.advance(skipper, Status::analyzing), std::logic_error);
  EXPECT_EQ(index.get(skipper)->status, Status::parsing);
  EXPECT_EQ(index.transitions(id), (std::vector<Status>{Status::received, Status::parsing,
                                                        Status::analyzing, Status::complete}));
}

TEST(ArchiveIndex, FailureClearsPacketCountAndRecordsReason) {
  TempDir dir;
  ArchiveIndex index(dir / "index");
  const std::string id = "0000000000000002";
  index.insert(sample_entry(id, 1));
  index.advance(id, Status::parsing);
  index.mark_analyzing(id, 5, false);
  EXPECT_TRUE(index.mark_failed(id, "disk full"));
  const auto e = index.get(id);
  EXPECT_EQ(e->status, Status::failed);
  EXPECT_FALSE(e->packet_count.has_value());
  EXPECT_EQ(e->failure_reason, "disk full");
  EXPECT_TRUE(index.unfinished().empty());
}

TEST(ArchiveIndex, RandomTransitionSequencesStayMonotonic) {
  TempDir dir;
  ArchiveIndex index(dir / "index");
  std::mt19937_64 rng(99);
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) {
    ids.push_back(hex_id(static_cast<uint64_t>(i) + 1));
    index.insert(sample_entry(ids.back(), i));
  }
  const std::vector<Status> all = {Status::received, Status::parsing, Status::analyzing, Status::complete,
                                   Status::failed};
  for (int step = 0; step < 600; ++step) {
    const auto& id = ids[rng() % ids.size()];
    const Status to = all[rng() % all.size()];
    try {
      if (to == Status::failed) {
        index.mark_failed(id, "injected");
      } else if (to == Status::analyzing) {
        index.mark_analyzing(id, rng() % 100, rng() % 2 == 0);
      } else {
        index.advance(id, to);
      }
    } catch (const std::logic_error&) {
      const auto e = index.get(id);
      EXPECT_TRUE(is_terminal(e->status) || !e->packet_count.has_value());
    }
  }
  for (const auto& id : ids) {
    const auto log = index.transitions(id);
    ASSERT_FALSE(log.empty());
    EXPECT_EQ(log.front(), Status::received);
    for (std::size_t i = 1; i < log.size(); ++i) {
      EXPECT_LT(static_cast<int>(log[i - 1]), static_cast<int>(log[i])) << id;
    }
    const auto e = index.get(id);
    EXPECT_EQ(e->status, log.back());
    const bool counted = e->status == Status::analyzing || e->status == Status::complete;
    EXPECT_EQ(e->packet_count.has_value(), counted) << id;
  }
}

TEST(ArchiveIndex, GarbageFileIsReportedCorrupt) {
  TempDir dir;
  write_text(dir / "index", std::string(8192, 'x'));
  EXPECT_THROW(ArchiveIndex(dir / "index"), CorruptIndex);
  EXPECT_THROW(AnalysisService(config_for(dir.path())), CorruptIndex);
}

TEST(ArchiveIndex, DamagedPagesAreReportedCorrupt) {
  TempDir dir;
  {
    ArchiveIndex index(dir / "index");
    for (int i = 0; i < 300; ++i) index.insert(sample_entry(hex_id(static_cast<uint64_t>(i) + 1), i));
  }
  auto bytes = read_file(dir / "index");
  ASSERT_GT(bytes.size(), 8192u);
  for (std::size_t i = 4096; i < bytes.size(); ++i) bytes[i] = static_cast<uint8_t>(i * 31);
  write_file(dir / "index", bytes);
  EXPECT_THROW(ArchiveIndex(dir / "index"), CorruptIndex);
}

// ---- job queue ----

TEST(JobQueue, DeduplicatesPendingAndInFlight) {
  std::mutex m;
  std::condition_variable cv;
  bool release = false;
  std::atomic<int> started{0};
  std::map<std::string, int> runs;
  JobQueue q(1, [&](const std::string& id) {
    {
      std::lock_guard lock(m);
      ++runs[id];
    }
    ++started;
    std::unique_lock lock(m);
    cv.wait(lock, [&] { return release; });
  });
  ASSERT_TRUE(q.enqueue("a"));
  while (started.load() == 0) std::this_thread::yield();
  EXPECT_FALSE(q.enqueue("a"));  // in flight
  EXPECT_TRUE(q.enqueue("b"));
  EXPECT_FALSE(q.enqueue("b"));  // pending
  EXPECT_EQ(q.pending(), 1u);
  EXPECT_EQ(q.in_flight(), std::vector<std::string>{"a"});
  {
    std::lock_guard lock(m);
    release = true;
  }
  cv.notify_all();
  q.wait_idle();
  EXPECT_EQ(runs, (std::map<std::string, int>{{"a", 1}, {"b", 1}}));
  EXPECT_TRUE(q.enqueue("a"));  // finished jobs may run again
  q.wait_idle();
  EXPECT_EQ(runs["a"], 2);
}

TEST(JobQueue, ConcurrencyNeverExceedsWorkers) {
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  std::atomic<int> done{0};
  std::mutex m;
  std::set<std::string> running;
  bool overlap = false;
  JobQueue q(3, [&](const std::string& id) {
    {
      std::lock_guard lock(m);
      overlap |= !running.insert(id).second;
    }
    const int now = ++active;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --active;
    {
      std::lock_guard lock(m);
      running.erase(id);
    }
    ++done;
  });
  for (int round = 0; round < 3; ++round) {
    for (int i = 0; i < 20; ++i) q.enqueue("job" + std::to_string(i));
  }
  q.wait_idle();
  EXPECT_LE(peak.load(), 3);
  EXPECT_GE(peak.load(), 1);
  EXPECT_FALSE(overlap);
  EXPECT_GE(done.load(), 20);
  EXPECT_EQ(q.workers(), 3u);
}

TEST(JobQueue, HandlerExceptionsDoNotStopWorkers) {
  std::atomic<int> ok{0};
  JobQueue q(1, [&](const std::string& id) {
    if (id == "boom") throw std::runtime_error("boom");
    ++ok;
  });
  q.enqueue("boom");
  q.enqueue("fine");
  q.wait_idle();
  EXPECT_EQ(ok.load(), 1);
}

TEST(JobQueue, StopDropsPendingWork) {
  std::atomic<int> runs{0};
  JobQueue q(1, [&](const std::string&) {
    ++runs;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  });
  for (int i = 0; i < 10; ++i) q.enqueue(std::to_string(i));
  std::this_thread::sleep_for(std::chrono::milliseconds(10));
  q.stop();
  EXPECT_LT(runs.load(), 10);
  EXPECT_FALSE(q.enqueue("late"));
}

TEST(JobQueue, ZeroWorkersIsRejected) {
  EXPECT_THROW(JobQueue(0, [](const std::string&) {}), std::invalid_argument);
}

// ---- analysis service ----

TEST(Service, RejectsBadUploads) {
  TempDir dir;
  auto cfg = config_for(dir.path());
  cfg.max_upload_bytes = 4096;
  AnalysisService s(cfg);
  expect_api_error([&] { s.upload("", "x"); }, 400, "EmptyBody");
  expect_api_error([&] { s.upload(std::string(5000, '\0'), "x"); }, 413, "BodyTooLarge");
  const auto pcapng = read_text(test_data_dir() / "section_header.pcapng");
  expect_api_error([&] { s.upload(pcapng, "x.pcapng"); }, 422, "NotPcap");
  expect_api_error([&] { s.upload(read_text(test_data_dir() / "not_a_capture.bin"), "x"); }, 422, "NotPcap");
  expect_api_error([&] { s.upload("\xd4\xc3\xb2\xa1", "short"); }, 422, "NotPcap");
  EXPECT_TRUE(s.list().empty());
  EXPECT_EQ(staging_files(s), 0u);
}

TEST(Service, StartsFreshWithEmptyList) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  EXPECT_TRUE(s.list().empty());
  EXPECT_TRUE(fs::is_directory(dir / "staging"));
  EXPECT_TRUE(fs::is_directory(dir / "archive"));
  EXPECT_TRUE(fs::exists(dir / "index"));
}

TEST(Service, CorpusUploadsMatchFrozenReports) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto sums = corpus_checksums();
  std::map<std::string, fs::path> uploaded;
  for (const auto& f : corpus_files()) {
    const auto r = s.upload(read_text(f), f.filename().string());
    EXPECT_EQ(r.status, Status::received);
    uploaded[r.capture_id] = f;
  }
  s.wait_idle();
  EXPECT_EQ(staging_files(s), 0u);
  for (const auto& [id, f] : uploaded) {
    SCOPED_TRACE(f.filename().string());
    const auto e = s.status(id);
    ASSERT_EQ(e.status, Status::complete) << e.failure_reason.value_or("");
    EXPECT_EQ(e.original_name, f.filename().string());
    EXPECT_EQ(e.packet_count, load_reference(f).size());
    EXPECT_EQ(e.pcap_bytes, fs::file_size(f));
    EXPECT_EQ(e.checksum, sums.at(f.filename().string()));
    const auto dir_id = s.archive_dir(id);
    for (const char* name : {"raw.pcap", "report.json", "packets.ndjson", "flows.csv"}) {
      EXPECT_TRUE(fs::exists(dir_id / name)) << name;
    }
    EXPECT_EQ(read_file(dir_id / "raw.pcap"), read_file(f));
    const auto report = s.report(id);
    EXPECT_EQ(normalize_report(report, f.stem().string()), read_text(report_fixture(f)));
    EXPECT_EQ(s.report(id), report);
    EXPECT_EQ(s.index().transitions(id), (std::vector<Status>{Status::received, Status::parsing,
                                                              Status::analyzing, Status::complete}));
  }
}

TEST(Service, IngestIsIdempotent) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto f = corpus_dir() / "udp_gaps.pcap";
  const auto id = s.upload(read_text(f), "udp_gaps.pcap").capture_id;
  s.wait_idle();
  const auto before = s.status(id);
  const auto path = s.ingest(id);
  EXPECT_EQ(path, s.archive_dir(id) / "raw.pcap");
  EXPECT_EQ(s.ingest(id), path);
  EXPECT_EQ(s.status(id), before);
  EXPECT_EQ(read_file(path), read_file(f));
}

TEST(Service, MissingStagedFileFailsTheEntry) {
  TempDir dir;
  {
    ArchiveIndex index(dir / "index");
    index.insert(sample_entry("00000000deadbeef", 5));
  }
  AnalysisService s(config_for(dir.path()));
  s.wait_idle();
  const auto e = s.status("00000000deadbeef");
  EXPECT_EQ(e.status, Status::failed);
  ASSERT_TRUE(e.failure_reason.has_value());
  EXPECT_NE(e.failure_reason->find("StagingMissing"), std::string::npos);
}

TEST(Service, TruncatedTailCompletesWithPrefix) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto id = s.upload(read_text(test_data_dir() / "truncated_tail.pcap"), "t.pcap").capture_id;
  s.wait_idle();
  const auto e = s.status(id);
  EXPECT_EQ(e.status, Status::complete);
  EXPECT_TRUE(e.truncated);
  EXPECT_EQ(e.packet_count, 3u);
  EXPECT_NE(s.report(id).find("\"truncated\":true"), std::string::npos);
  EXPECT_EQ(s.packets(id, 0, 100).total, 3u);
}

TEST(Service, ForgedMagicWithGarbageFails) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto id = s.upload(read_text(test_data_dir() / "garbage_after_header.pcap"), "g.pcap").capture_id;
  s.wait_idle();
  const auto e = s.status(id);
  EXPECT_EQ(e.status, Status::failed);
  ASSERT_TRUE(e.failure_reason.has_value());
  EXPECT_NE(e.failure_reason->find("TruncatedRecord"), std::string::npos);
  EXPECT_FALSE(e.packet_count.has_value());
  expect_api_error([&] { s.report(id); }, 409, "NotReady");
}

TEST(Service, UnknownIdsAre404) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  for (const std::string id : {"0123456789abcdef", "nothex", "../index"}) {
    expect_api_error([&] { s.status(id); }, 404, "UnknownId");
    expect_api_error([&] { s.report(id); }, 404, "UnknownId");
    expect_api_error([&] { s.packets(id, 0, 10); }, 404, "UnknownId");
    expect_api_error([&] { s.flows(id, std::nullopt, std::nullopt); }, 404, "UnknownId");
  }
}

TEST(Service, ResultsAreNotReadyWhileAnalysing) {
  TempDir dir;
  AnalysisService s(config_for(dir.path(), 400));
  const auto id = s.upload(read_text(corpus_dir() / "mixed_ipv4.pcap"), "m.pcap").capture_id;
  EXPECT_FALSE(is_terminal(s.status(id).status));
  expect_api_error([&] { s.report(id); }, 409, "NotReady");
  expect_api_error([&] { s.packets(id, 0, 10); }, 409, "NotReady");
  expect_api_error([&] { s.flows(id, std::nullopt, std::nullopt); }, 409, "NotReady");
  s.wait_idle();
  EXPECT_EQ(s.status(id).status, Status::complete);
}

TEST(Service, PacketPagesFollowDissection) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto f = corpus_dir() / "mixed_ipv4.pcap";
  const auto id = s.upload(read_text(f), "m.pcap").capture_id;
  s.wait_idle();
  Dissector d;
  const auto expected = dissect_capture(f, d).packets;

  const auto first = s.packets(id, 0, 2);
  EXPECT_EQ(first.total, expected.size());
  ASSERT_EQ(first.items.size(), 2u);
  EXPECT_EQ(first.items[0].index, 0u);
  EXPECT_EQ(first.items[1].index, 1u);

  std::vector<DissectedPacket> walked;
  for (uint64_t off = 0; off < expected.size(); off += 7) {
    const auto page = s.packets(id, off, 7);
    walked.insert(walked.end(), page.items.begin(), page.items.end());
  }
  ASSERT_EQ(walked.size(), expected.size());
  for (std::size_t i = 0; i < walked.size(); ++i) {
    EXPECT_EQ(walked[i].index, expected[i].index);
    EXPECT_EQ(walked[i].ts_us, expected[i].ts_us);
    EXPECT_EQ(walked[i].src_addr, expected[i].src_addr);
    EXPECT_EQ(walked[i].dst_addr, expected[i].dst_addr);
    EXPECT_EQ(walked[i].protocol_label, expected[i].protocol_label);
    EXPECT_EQ(walked[i].frame_len, expected[i].frame_len);
    EXPECT_EQ(walked[i].payload_preview, expected[i].payload_preview);
  }

  const auto past = s.packets(id, expected.size() + 5, 10);
  EXPECT_TRUE(past.items.empty());
  EXPECT_EQ(past.total, expected.size());
  expect_api_error([&] { s.packets(id, 0, 1001); }, 400, "BadPagination");
  expect_api_error([&] { s.packets(id, 0, 0); }, 400, "BadPagination");
  EXPECT_EQ(s.packets(id, 0, 1000).items.size(), expected.size());

  const auto json = page_to_json(id, first);
  EXPECT_EQ(json["total"], expected.size());
  EXPECT_EQ(json["items"][0]["timestamp"], "2023-11-14T22:13:20.000000Z");
  for (const char* key : {"index", "timestamp", "src", "dst", "protocol_label", "frame_len",
                          "payload_preview_hex"}) {
    EXPECT_TRUE(json["items"][0].contains(key)) << key;
  }
}

TEST(Service, FlowsServeArchiveOrRecompute) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto f = corpus_dir() / "udp_gaps.pcap";
  const auto id = s.upload(read_text(f), "u.pcap").capture_id;
  s.wait_idle();

  const auto archived = read_text(s.archive_dir(id) / "flows.csv");
  EXPECT_EQ(s.flows(id, std::nullopt, std::nullopt), archived);
  EXPECT_EQ(s.flows(id, 15.0, 120.0), archived);

  // The stored summaries alone reproduce the archived flows.
  std::ifstream nd(s.archive_dir(id) / "packets.ndjson", std::ios::binary);
  EXPECT_EQ(export_flows_csv(aggregate(read_summaries(nd))), archived);

  const auto tight = s.flows(id, 1.0, std::nullopt);
  EXPECT_GT(csv_rows(tight), csv_rows(archived));
  EXPECT_GE(csv_rows(s.flows(id, 25.0, std::nullopt)), 1u);

  expect_api_error([&] { s.flows(id, 0.0, std::nullopt); }, 400, "NonPositiveTimeout");
  expect_api_error([&] { s.flows(id, std::nullopt, -3.0); }, 400, "NonPositiveTimeout");
  expect_api_error([&] { s.flows(id, std::nan(""), std::nullopt); }, 400, "NonPositiveTimeout");
  expect_api_error([&] { s.flows(id, 1e12, std::nullopt); }, 400, "BadTimeout");
}

TEST(Service, ListIsNewestFirst) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto a = s.upload(read_text(corpus_dir() / "empty.pcap"), "a.pcap").capture_id;
  std::this_thread::sleep_for(std::chrono::milliseconds(2));
  const auto b = s.upload(read_text(corpus_dir() / "raw_ip.pcap"), "b.pcap").capture_id;
  s.wait_idle();
  const auto all = s.list();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].capture_id, b);
  EXPECT_EQ(all[1].capture_id, a);
  const auto json = entry_to_json(all[0]);
  EXPECT_EQ(json["status"], "complete");
  EXPECT_EQ(json["original_name"], "b.pcap");
  EXPECT_TRUE(json["failure_reason"].is_null());
}

TEST(Service, OriginalNamesAreSanitised) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto pcap = read_text(corpus_dir() / "empty.pcap");
  EXPECT_EQ(s.status(s.upload(pcap, "../../etc/passwd").capture_id).original_name, "passwd");
  EXPECT_EQ(s.status(s.upload(pcap, "").capture_id).original_name, "upload.pcap");
  EXPECT_EQ(s.status(s.upload(pcap, std::string("a\nb\x01.pcap")).capture_id).original_name, "ab.pcap");
}

TEST(Service, ConcurrentUploadsAllFinish) {
  TempDir dir;
  AnalysisService s(config_for(dir.path()));
  const auto files = corpus_files();
  std::vector<std::thread> threads;
  std::vector<std::string> ids(16);
  for (int i = 0; i < 16; ++i) {
    threads.emplace_back([&, i] {
      const auto& f = files[static_cast<std::size_t>(i) % files.size()];
      ids[static_cast<std::size_t>(i)] = s.upload(read_text(f), f.filename().string()).capture_id;
    });
  }
  for (auto& t : threads) t.join();
  s.wait_idle();
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 16u);
  for (const auto& id : ids) {
    const auto e = s.status(id);
    EXPECT_EQ(e.status, Status::complete) << e.failure_reason.value_or("");
    EXPECT_LE(s.queue().in_flight().size(), s.config().workers);
  }
}

TEST(Service, RestartResumesUnfinishedWork) {
  TempDir dir;
  const auto f = corpus_dir() / "radio_small.pcap";
  const std::string staged_id = "00000000000000a1";
  const std::string parsed_id = "00000000000000a2";
  {
    ArchiveIndex index(dir / "index");
    index.insert(sample_entry(staged_id, 1));
    index.insert(sample_entry(parsed_id, 2));
    index.advance(parsed_id, Status::parsing);
  }
  fs::create_directories(dir / "staging");
  fs::copy_file(f, dir / "staging" / (staged_id + ".pcap"));
  write_text(dir / "staging" / ".upload-0000.part", "half an upload");
  // The second capture had already been moved into the archive.
  fs::create_directories(dir / "archive" / parsed_id);
  fs::copy_file(f, dir / "archive" / parsed_id / "raw.pcap");

  AnalysisService s(config_for(dir.path()));
  s.wait_idle();
  EXPECT_FALSE(fs::exists(dir / "staging" / ".upload-0000.part"));
  for (const auto& id : {staged_id, parsed_id}) {
    const auto e = s.status(id);
    ASSERT_EQ(e.status, Status::complete) << id << " " << e.failure_reason.value_or("");
    EXPECT_EQ(e.checksum, corpus_checksums().at("radio_small.pcap"));
    EXPECT_EQ(e.pcap_bytes, fs::file_size(f));
    EXPECT_EQ(normalize_report(s.report(id), "radio_small"), read_text(report_fixture(f)));
  }
  EXPECT_EQ(s.index().transitions(parsed_id), (std::vector<Status>{Status::received, Status::parsing,
                                                                   Status::analyzing, Status::complete}));
}

TEST(Service, StateSurvivesRestart) {
  TempDir dir;
  std::string id;
  std::string report;
  {
    AnalysisService s(config_for(dir.path()));
    id = s.upload(read_text(corpus_dir() / "ipv6_mix.pcap"), "v6.pcap").capture_id;
    s.wait_idle();
    report = s.report(id);
  }
  AnalysisService again(config_for(dir.path()));
  EXPECT_EQ(again.status(id).status, Status::complete);
  EXPECT_EQ(again.report(id), report);
  EXPECT_EQ(again.list().size(), 1u);
}
