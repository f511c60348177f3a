#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsgan {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors. Every failure surfaced to callers carries one of these categories;
// the CLI maps them to exit codes.
// ---------------------------------------------------------------------------

enum class ErrorCategory { Config, Data, Numeric, Io, Usage };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}
  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

inline Error config_error(const std::string& msg) { return Error(ErrorCategory::Config, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorCategory::Data, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorCategory::Numeric, msg); }
inline Error io_error(const std::string& msg) { return Error(ErrorCategory::Io, msg); }

#define TSGAN_CHECK(cond, cat, msg)                      \
  do {                                                   \
    if (!(cond)) throw ::tsgan::Error(::tsgan::ErrorCategory::cat, (msg)); \
  } while (0)

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 output is bit-exact per the standard; the
// distribution helpers below are hand-rolled so streams stay stable across
// standard-library versions.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Domain-separated stream derivation: mixes a seed with a tag string and
// integer lanes so independent consumers never share a stream.
inline std::uint64_t derive_seed(std::uint64_t seed, const char* tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed);
  for (const char* p = tag; *p; ++p) h = splitmix64(h ^ static_cast<std::uint64_t>(*p));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    TSGAN_CHECK(n > 0, Data, "uniform_int: empty range");
    // rejection sampling on the top bits keeps the draw unbiased
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do { v = eng_(); } while (v >= limit);
    return v % n;
  }

  double gaussian() {
    // Box-Muller; one value per call keeps replay simple
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Sample k distinct indices from [0, n) in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    TSGAN_CHECK(k <= n, Data, "sample_without_replacement: k exceeds population");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(pool.size()));
      out.push_back(pool[j]);
      pool[j] = pool.back();
      pool.pop_back();
    }
    return out;
  }

 private:
  std::mt19937_64 eng_;
};

// FNV-1a over a byte string; used for config hashes in checkpoint manifests.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace tsgan
