// common.hpp - part of volsynth: error model, deterministic RNG, worker pool.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace volsynth {

// Error classes map 1:1 onto the C API status codes.
enum class errc {
  io = 1,
  format = 2,        // bad magic, malformed container
  unsupported = 3,   // recognized but out of the supported subset
  corrupt = 4,       // truncated payload, non-finite data
  invalid = 5,       // precondition / argument violation
  shape = 6,         // tensor or volume shape mismatch
  numeric = 7,       // NaN abort during optimization
  incompatible = 8,  // checkpoint/architecture mismatch
  config = 9,        // run-config schema violation
};

class Error : public std::runtime_error {
 public:
  Error(errc c, const std::string& msg) : std::runtime_error(msg), code_(c) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc c, const std::string& msg) { throw Error(c, msg); }

inline void require(bool ok, errc c, const std::string& msg) {
  if (!ok) fail(c, msg);
}

// Deterministic, platform-independent RNG (splitmix64-seeded xoshiro256**).
// std::mt19937 would be portable but the standard distributions are not, so
// every draw used anywhere in the pipeline goes through this class.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  uint64_t next() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // in [0,1)
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next() % span);
  }

  bool coin() { return (next() & 1u) != 0; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Box-Muller; u clamped away from 0 so log stays finite.
    double u = uniform01();
    if (u < 1e-300) u = 1e-300;
    const double v = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * v);
    have_spare_ = true;
    return r * std::cos(two_pi * v);
  }

  std::array<double, 3> unit_vector() {
    // Marsaglia rejection on the disk.
    for (;;) {
      const double a = uniform(-1.0, 1.0);
      const double b = uniform(-1.0, 1.0);
      const double s = a * a + b * b;
      if (s >= 1.0 || s == 0.0) continue;
      const double m = 2.0 * std::sqrt(1.0 - s);
      return {a * m, b * m, 1.0 - 2.0 * s};
    }
  }

  // Independent child stream (for per-item seeding).
  Rng fork(uint64_t stream) const {
    uint64_t x = state_[0] ^ (stream * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull);
    return Rng(splitmix64(x));
  }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t x = seed ^ (stream * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
  return Rng::splitmix64(x);
}

// Static-partition worker pool. Chunks write disjoint outputs, so results are
// identical for any worker count; cross-chunk reductions are done by the
// caller after run() returns, in chunk order.
class WorkerPool {
 public:
  static WorkerPool& instance();

  int workers() const { return workers_; }

  // Executes fn(chunk) for chunk in [0, n_chunks). Blocks until done.
  void run(int64_t n_chunks, const std::function<void(int64_t)>& fn);

  ~WorkerPool();

 private:
  WorkerPool();
  struct Impl;
  Impl* impl_;
  int workers_;
};

// SHA-256 (FIPS 180-4), used for run manifests and rerun checksums.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  std::string hex_digest();  // finalizes

  static std::string file_hex(const std::string& path);
  static std::string bytes_hex(const void* data, size_t len);

 private:
  void process_block(const uint8_t* p);
  uint32_t h_[8];
  uint8_t buf_[64];
  size_t buf_len_ = 0;
  uint64_t total_ = 0;
};

std::string format_double(double v);       // shortest round-trip decimal
std::string format_fixed(double v, int decimals);

// Strictly sequential double-precision accumulation. These live in a TU
// compiled without value-changing math flags, so reductions keep one fixed
// association regardless of how callers are optimized.
double strict_sum(const float* p, int64_t n);
double strict_sum(const double* p, int64_t n);
double strict_abs_diff_sum(const float* a, const float* b, int64_t n);
double strict_abs_diff_sum(const double* a, const double* b, int64_t n);

}  // namespace volsynth
