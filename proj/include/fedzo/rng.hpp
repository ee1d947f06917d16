#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>

#include "fedzo/tensor.hpp"

namespace fedzo {

// SplitMix64 finalizer; used to derive stream ids from structured keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Handle on one counter-based random stream. Two equal handles produce the
// same numbers on every platform, kernel variant and thread schedule.
struct SeededRng {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  // Child stream keyed by `parts`; no sequential coupling to the parent.
  SeededRng derive(std::initializer_list<std::uint64_t> parts) const noexcept {
    std::uint64_t s = mix64(stream_id ^ 0x5EED5EED5EED5EEDull);
    for (std::uint64_t p : parts) s = mix64(s ^ mix64(p));
    return {seed, s};
  }

  friend bool operator==(const SeededRng&, const SeededRng&) = default;
};

// Element i of the standard-normal sequence of `rng`, written for
// i in [first, first + out.size()).
void gaussian_fill(const SeededRng& rng, std::uint64_t first, std::span<double> out);

// `length` i.i.d. N(0, sigma^2) draws: sigma times the first `length`
// elements of the standard-normal sequence of `rng`.
Tensor seeded_gaussian(const SeededRng& rng, std::size_t length, double sigma);

// Sequential consumer of a stream for variable-length sampling (shuffles,
// gamma variates). Uses counter blocks from 2^63 upward so it never overlaps
// the index space of gaussian_fill on the same handle.
class RandomStream {
 public:
  explicit RandomStream(SeededRng rng) : rng_(rng) {}

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();
  // Uniform in (0, 1].
  double uniform_open_low() { return 1.0 - uniform(); }
  double normal();
  // Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);
  // log of a Gamma(shape, 1) variate; finite even when the variate
  // underflows (shape << 1).
  double log_gamma_variate(double shape);

 private:
  SeededRng rng_;
  std::uint64_t block_ = 0;
  std::uint32_t words_[4] = {};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedzo
