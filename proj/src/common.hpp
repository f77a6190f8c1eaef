#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "c3ca.h"

namespace c3ca {

class Error : public std::runtime_error {
 public:
  Error(c3ca_status code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  c3ca_status code() const { return code_; }

 private:
  c3ca_status code_;
};

[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw Error(C3CA_ERR_INVALID_ARGUMENT, msg);
}
[[noreturn]] inline void fail_io(const std::string& msg) {
  throw Error(C3CA_ERR_IO, msg);
}
[[noreturn]] inline void fail_numeric(const std::string& msg) {
  throw Error(C3CA_ERR_NUMERIC, msg);
}
[[noreturn]] inline void fail_runtime(const std::string& msg) {
  throw Error(C3CA_ERR_RUNTIME, msg);
}

// Log level from C3CA_LOG (error|info|debug), read once. Default info.
enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };
LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

uint64_t fnv1a64(const void* data, size_t size,
                 uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s);
uint64_t hash_of_doubles(const std::vector<double>& values,
                         uint64_t seed = 0xcbf29ce484222325ull);

// Deterministic RNG. The mt19937_64 stream is pinned by the standard, and
// every draw below is derived from raw 64-bit words rather than the
// implementation-defined std distributions, so a seed fixes every artifact
// byte-for-byte.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n); n must be > 0.
  uint64_t below(uint64_t n);
  // k distinct indices from [0, n), in draw order.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream for a named sub-component.
  Rng fork(std::string_view label);
  Rng fork(uint64_t salt);

 private:
  std::mt19937_64 engine_;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// Pure sub-seed derivation: stable in (base, label), independent of any
// RNG stream state.
uint64_t derive_seed(uint64_t base, std::string_view label);
uint64_t derive_seed(uint64_t base, uint64_t salt);

std::string read_text_file(const std::string& path);
// Writes via a temp file in the same directory, then renames.
void write_text_file_atomic(const std::string& path,
                            const std::string& contents);
bool file_exists(const std::string& path);

}  // namespace c3ca
