#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cloudcap::service {

/// Writes `data` to a sibling temp file, fsyncs it, renames it over `path`
/// and fsyncs the directory, so readers see either the old or the new file.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

void fsync_path(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a file's contents, streamed.
std::string sha256_file(const std::filesystem::path& path);

/// 16 lowercase hex characters from the OpenSSL CSPRNG.
std::string random_capture_id();

bool is_capture_id(std::string_view text);

std::string read_whole_file(const std::filesystem::path& path);

}  // namespace cloudcap::service
