// SPDX-License-Identifier: Apache-2.0
#include "sdseval/util.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "sdseval/error.hpp"

namespace sdseval {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) fail(ErrorCode::InvalidArgument, "cannot format double");
  return std::string(buf.data(), end);
}

std::string round_half_even(double v, int digits) {
  std::array<char, 512> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed);
  if (ec != std::errc{}) fail(ErrorCode::InvalidArgument, "cannot format double");
  std::string s(buf.data(), end);

  bool negative = !s.empty() && s.front() == '-';
  if (negative) s.erase(0, 1);
  auto dot = s.find('.');
  std::string int_part = dot == std::string::npos ? s : s.substr(0, dot);
  std::string frac = dot == std::string::npos ? std::string{} : s.substr(dot + 1);

  // Digits of the kept part, as one decimal integer string.
  std::string kept = int_part + frac.substr(0, std::min<std::size_t>(frac.size(), digits));
  kept.append(static_cast<std::size_t>(digits) - std::min<std::size_t>(frac.size(), digits), '0');
  std::string rest = frac.size() > static_cast<std::size_t>(digits) ? frac.substr(digits) : std::string{};

  bool round_up = false;
  if (!rest.empty()) {
    if (rest[0] > '5') {
      round_up = true;
    } else if (rest[0] == '5') {
      bool beyond = rest.find_first_not_of('0', 1) != std::string::npos;
      round_up = beyond || ((kept.back() - '0') % 2 == 1);
    }
  }
  if (round_up) {
    int i = static_cast<int>(kept.size()) - 1;
    while (i >= 0 && kept[i] == '9') kept[i--] = '0';
    if (i < 0) {
      kept.insert(kept.begin(), '1');
    } else {
      ++kept[i];
    }
  }
  std::string ip = kept.substr(0, kept.size() - digits);
  std::string fp = kept.substr(kept.size() - digits);
  bool all_zero = kept.find_first_not_of('0') == std::string::npos;
  std::string out = (negative && !all_zero) ? "-" : "";
  out += ip.empty() ? "0" : ip;
  if (digits > 0) out += "." + fp;
  return out;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::InvalidArgument, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

SeededRng SeededRng::derive(std::uint64_t seed, std::string_view key) {
  SeededRng mixer(seed ^ fnv1a64(key));
  mixer.next();
  return SeededRng(mixer.next());
}

std::uint64_t SeededRng::next() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t SeededRng::below(std::uint64_t bound) {
  if (bound == 0) fail(ErrorCode::InvalidArgument, "SeededRng::below: zero bound");
  // Rejection sampling over the largest multiple of bound.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = next();
  } while (r >= limit);
  return r % bound;
}

std::vector<std::size_t> SeededRng::sample_indices(std::size_t n, std::size_t k) {
  if (k > n) fail(ErrorCode::InvalidArgument, "cannot draw more indices than available");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace sdseval
