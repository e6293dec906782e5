#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gridfl {

// Error taxonomy; the CLI maps these to exit codes (config 2, data 3,
// protocol 4, audit 5).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(std::string_view text);

uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t splitmix64(uint64_t x);

// Maps a 64-bit hash to [0, 1).
double unit_from_hash(uint64_t h);

// Stable per-actor seed derivation from a master seed and a label.
uint64_t derive_seed(uint64_t master, std::string_view label);

// "YYYY-MM-DDTHH:MM:SS", UTC.
int64_t parse_iso8601(const std::string& text);
std::string format_iso8601(int64_t epoch_seconds);

// Shortest exact decimal for a double; used everywhere a double hits a file
// so reruns are byte-identical.
std::string format_double(double v);

}  // namespace gridfl
