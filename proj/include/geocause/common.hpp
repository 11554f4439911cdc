#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace geocause {

// ---------------------------------------------------------------------------
// Error taxonomy. Every throwing path in the library uses one of these so the
// command-line front end can map failures onto stable exit codes:
//   ValidationError -> 2, DataError -> 3, NumericError -> 4.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Caller broke a contract: bad shapes, invalid configuration, out-of-range
/// arguments. These are programming or configuration mistakes, not bad data.
struct ValidationError : Error {
  using Error::Error;
};

/// The input data is malformed or inconsistent (unreadable file, missing
/// column, contradictory records).
struct DataError : Error {
  using Error::Error;
};

/// A computation left the land of finite numbers (divergent optimisation,
/// degenerate weights, non-finite gradients).
struct NumericError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic pseudo-randomness. All stochastic code paths derive their
// streams from explicit 64-bit seeds through splitmix64, so a run is a pure
// function of its configuration. Distinct sub-streams (per fold, per unit,
// per epoch) are derived by mixing the parent seed with a stream index.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive an independent child seed from a parent seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  std::uint64_t s = parent ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  return splitmix64(s);
}

/// Small counter-based generator: cheap to construct, stable across
/// platforms, good enough for sampling decisions (not cryptography).
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Standard normal via Box-Muller (no cached spare: keeps the stream
  /// position independent of call parity).
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64 in all
    // of our uses, so the bias is negligible and determinism is what counts.
    return next_u64() % n;
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Deterministic text formatting for numbers. Output files must be
// byte-identical across runs, so all floating-point serialisation funnels
// through std::to_chars (shortest round-trip form, locale-independent).
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Content hashing for run manifests: 64-bit FNV-1a over raw bytes, printed
// as 16 hex digits. Not cryptographic; used to detect accidental divergence
// between pipeline stages, not to resist an adversary.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::string_view bytes);
std::string hash_file_hex(const std::string& path);

}  // namespace geocause
