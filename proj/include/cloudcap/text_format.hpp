#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cloudcap {

/// "2023-11-14T22:13:20.000000Z" for microseconds since the epoch.
std::string iso8601_utc_us(int64_t us);

/// Whole-second form, "2023-11-14T22:13:20Z".
std::string iso8601_utc_s(int64_t seconds);

int64_t now_utc_us();

std::string hex_encode(std::span<const uint8_t> bytes);

/// Throws std::invalid_argument on odd length or non-hex characters.
std::vector<uint8_t> hex_decode(std::string_view text);

/// Fixed-point decimal for a microsecond quantity in seconds, e.g. 1500000 → "1.500000".
std::string seconds_fixed6(int64_t us);

}  // namespace cloudcap
