#include "fedzo/rng.hpp"

#include <cmath>

#include "fedzo/error.hpp"
#include "fedzo/kernels.hpp"
#include "fedzo/philox.hpp"
#include "kernels/normal_math.hpp"

namespace fedzo {

void gaussian_fill(const SeededRng& rng, std::uint64_t first, std::span<double> out) {
  kernels::active().fill_normal(rng.seed, rng.stream_id, first, out.data(), out.size());
}

Tensor seeded_gaussian(const SeededRng& rng, std::size_t length, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("seeded_gaussian: sigma must be > 0");
  Tensor t({length});
  gaussian_fill(rng, 0, t.data());
  for (double& v : t.data()) v *= sigma;
  return t;
}

namespace {
constexpr std::uint64_t kSequentialBase = std::uint64_t{1} << 63;
// libm is not bit-reproducible across platforms; the kernel log is.
using kernels::detail::log_positive;
}  // namespace

std::uint32_t RandomStream::next_u32() {
  if (used_ == 4) {
    const PhiloxCounter w =
        philox4x32(philox_counter(kSequentialBase + block_++, rng_.stream_id), philox_key(rng_.seed));
    for (int i = 0; i < 4; ++i) words_[i] = w[i];
    used_ = 0;
  }
  return words_[used_++];
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double RandomStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  double z0 = 0.0;
  kernels::detail::box_muller(u1, u2, z0, spare_);
  has_spare_ = true;
  return z0;
}

std::uint64_t RandomStream::below(std::uint64_t n) {
  if (n == 0) throw ValidationError("RandomStream::below: empty range");
  const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % n);
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v < limit) return v % n;
  }
}

double RandomStream::log_gamma_variate(double shape) {
  if (!(shape > 0.0)) throw ValidationError("gamma shape must be > 0");
  if (shape < 1.0) {
    // G(a) = G(a + 1) * U^(1/a)
    return log_gamma_variate(shape + 1.0) + log_positive(uniform_open_low()) / shape;
  }
  // Marsaglia-Tsang
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open_low();
    if (log_positive(u) < 0.5 * x * x + d - d * v + d * log_positive(v)) return log_positive(d * v);
  }
}

}  // namespace fedzo
