#pragma once

#include <cstdint>
#include <string_view>

namespace omni {

// SplitMix64 (Steele, Lea & Flood 2014). The generator state is one 64-bit
// counter advanced by the golden-ratio increment; outputs go through the
// variant-13 finalizer. Everything here is integer arithmetic except the
// float conversions, so streams are identical on every platform.
//
// split(tag) derives an independent child stream from the current state and
// a tag without advancing the parent, which is how per-purpose sub-seeds are
// obtained from the single run seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 24 bits of mantissa.
  float uniform_f32() noexcept;
  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (one draw per call, no cached spare).
  double normal() noexcept;

  Rng split(std::string_view tag) const noexcept;
  Rng split(std::uint64_t tag) const noexcept;

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }

 private:
  std::uint64_t state_;
};

/// SplitMix64 finalizer applied to a single word.
std::uint64_t mix64(std::uint64_t x) noexcept;
/// FNV-1a over bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

/// Sub-seed derivation used throughout: mix64(seed ^ fnv1a(purpose)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) noexcept;

}  // namespace omni
