#include "common.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace c3ca {

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("C3CA_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    std::string_view v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

static void log_line(const char* tag, const std::string& msg) {
  std::fprintf(stderr, "[c3ca %s] %s\n", tag, msg.c_str());
}

void log_error(const std::string& msg) { log_line("error", msg); }

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) log_line("info", msg);
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) log_line("debug", msg);
}

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

uint64_t hash_of_doubles(const std::vector<double>& values, uint64_t seed) {
  return fnv1a64(values.data(), values.size() * sizeof(double), seed);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (have_cached_normal_) {
    have_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(theta);
  have_cached_normal_ = true;
  return r * std::cos(theta);
}

uint64_t Rng::below(uint64_t n) {
  if (n == 0) fail_invalid("Rng::below: n must be positive");
  return static_cast<uint64_t>(
      (static_cast<__uint128_t>(next_u64()) * n) >> 64);
}

std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
  if (k > n) fail_invalid("sample_without_replacement: k > n");
  std::vector<size_t> pool(n);
  for (size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<size_t> out;
  out.reserve(k);
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

Rng Rng::fork(std::string_view label) {
  return Rng(next_u64() ^ fnv1a64(label));
}

Rng Rng::fork(uint64_t salt) {
  uint64_t mixed = next_u64() ^ (salt + 0x9e3779b97f4a7c15ull);
  mixed ^= mixed >> 30;
  mixed *= 0xbf58476d1ce4e5b9ull;
  mixed ^= mixed >> 27;
  return Rng(mixed);
}

uint64_t derive_seed(uint64_t base, std::string_view label) {
  uint64_t h = fnv1a64(&base, sizeof(base));
  return fnv1a64(label.data(), label.size(), h);
}

uint64_t derive_seed(uint64_t base, uint64_t salt) {
  uint64_t h = fnv1a64(&base, sizeof(base));
  return fnv1a64(&salt, sizeof(salt), h);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail_io("read failed: " + path);
  return ss.str();
}

void write_text_file_atomic(const std::string& path,
                            const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot open file for writing: " + tmp);
    out.write(contents.data(),
              static_cast<std::streamsize>(contents.size()));
    if (!out) fail_io("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail_io("rename failed: " + tmp + " -> " + path);
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

}  // namespace c3ca
