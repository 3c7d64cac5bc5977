#include "corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace cloudcap::testkit {

fs::path corpus_dir() { return fs::path(CLOUDCAP_TEST_SOURCE_DIR) / "corpus"; }
fs::path test_data_dir() { return fs::path(CLOUDCAP_TEST_SOURCE_DIR) / "data"; }

std::vector<fs::path> corpus_files() {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(corpus_dir())) {
    if (entry.path().extension() == ".pcap") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::map<std::string, std::string> corpus_checksums() {
  std::map<std::string, std::string> out;
  std::istringstream in(read_text(corpus_dir() / "SHA256SUMS"));
  std::string digest, name;
  while (in >> digest >> name) out[name] = digest;
  return out;
}

fs::path report_fixture(const fs::path& capture) {
  return test_data_dir() / "reports" / (capture.stem().string() + ".json");
}

std::string normalize_report(const std::string& report, const std::string& capture_id) {
  static const std::regex head(R"re(^\{"capture_id":"[^"]*","generated_at":"[^"]*")re");
  if (!std::regex_search(report, head)) throw std::runtime_error("unexpected report prefix");
  return std::regex_replace(report, head,
                            "{\"capture_id\":\"" + capture_id +
                                "\",\"generated_at\":\"2023-11-14T22:13:20.000000Z\"",
                            std::regex_constants::format_first_only);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

std::vector<ReferenceRow> load_reference(const fs::path& capture) {
  fs::path csv = capture;
  csv.replace_extension(".reference.csv");
  std::istringstream in(read_text(csv));
  std::string line;
  std::getline(in, line);  // header
  std::vector<ReferenceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    cells.resize(6);
    rows.push_back({std::stoull(cells[0]), cells[1], cells[2], cells[3], cells[4], cells[5]});
  }
  return rows;
}

TempDir::TempDir() {
  std::random_device rd;
  path_ = fs::temp_directory_path() / ("cloudcap-test-" + std::to_string(rd()) + std::to_string(rd()));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

}  // namespace cloudcap::testkit
