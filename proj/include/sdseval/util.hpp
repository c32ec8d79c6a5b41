// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sdseval {

/// Trim ASCII whitespace and collapse internal runs to a single space.
std::string normalize_whitespace(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double v);

/// Round the decimal rendering of `v` to `digits` places, ties to even.
/// Operates on the shortest round-trip representation so 0.5355 rounds to
/// 0.536, not to whatever the binary neighbour suggests.
std::string round_half_even(double v, int digits);

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// splitmix64-driven generator. Unlike the <random> distributions its
/// bounded draws are specified here, so seeded output is identical across
/// standard library implementations.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  /// Stream keyed by (seed, key); used for per-record and per-sample streams.
  static SeededRng derive(std::uint64_t seed, std::string_view key);

  std::uint64_t next();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  bool coin() { return (next() >> 63) != 0; }
  /// Uniform double in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Partial Fisher-Yates: k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

 private:
  std::uint64_t state_;
};

}  // namespace sdseval
