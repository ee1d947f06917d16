#pragma once

// Scalar reference of the Box-Muller transform shared by every kernel
// variant. The SIMD versions replay exactly this operation sequence; only
// +, -, *, /, sqrt, floor and bit manipulation appear, all of which are
// correctly rounded, so results match bit for bit.

#include <bit>
#include <cmath>
#include <cstdint>

namespace fedzo::kernels::detail {

inline constexpr double kLn2Hi = 6.93147180369123816490e-01;
inline constexpr double kLn2Lo = 1.90821492927058770002e-10;
inline constexpr double kLg1 = 6.666666666666735130e-01;
inline constexpr double kLg2 = 3.999999999940941908e-01;
inline constexpr double kLg3 = 2.857142874366239149e-01;
inline constexpr double kLg4 = 2.222219843214978396e-01;
inline constexpr double kLg5 = 1.818357216161805012e-01;
inline constexpr double kLg6 = 1.531383769920937332e-01;
inline constexpr double kLg7 = 1.479819860511658591e-01;

inline constexpr double kS1 = -1.66666666666666324348e-01;
inline constexpr double kS2 = 8.33333333332248946124e-03;
inline constexpr double kS3 = -1.98412698298579493134e-04;
inline constexpr double kS4 = 2.75573137070700676789e-06;
inline constexpr double kS5 = -2.50507602534068634195e-08;
inline constexpr double kS6 = 1.58969099521155010221e-10;

inline constexpr double kC1 = 4.16666666666666019037e-02;
inline constexpr double kC2 = -1.38888888888741095749e-03;
inline constexpr double kC3 = 2.48015872894767294178e-05;
inline constexpr double kC4 = -2.75573143513906633035e-07;
inline constexpr double kC5 = 2.08757232129817482790e-09;
inline constexpr double kC6 = -1.13596475577881948265e-11;

inline constexpr double kHalfPi = 1.57079632679489661923;

inline constexpr std::uint64_t kOneBits = 0x3FF0000000000000ull;
// Adding 1.5 * 2^52 as a double turns a small int64 into its exact value.
inline constexpr std::uint64_t kMagicBits = 0x4338000000000000ull;
inline constexpr double kMagic = 6755399441055744.0;

// Natural log for normal positive x (fdlibm e_log.c, single branch).
inline double log_positive(double x) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  std::uint64_t hx = bits >> 32;
  const std::uint64_t lo = bits & 0xFFFFFFFFull;
  std::uint64_t k = (hx >> 20) - 1023;  // two's complement, may wrap
  hx &= 0x000FFFFFull;
  const std::uint64_t i = (hx + 0x95F64ull) & 0x100000ull;
  const std::uint64_t new_hi = hx | (i ^ 0x3FF00000ull);
  k += i >> 20;
  const double m = std::bit_cast<double>((new_hi << 32) | lo);
  const double dk = std::bit_cast<double>(k + kMagicBits) - kMagic;

  const double f = m - 1.0;
  const double s = f / (2.0 + f);
  const double z = s * s;
  const double w = z * z;
  const double t1 = w * (kLg2 + w * (kLg4 + w * kLg6));
  const double t2 = z * (kLg1 + w * (kLg3 + w * (kLg5 + w * kLg7)));
  const double r = t2 + t1;
  return dk * kLn2Hi - ((s * (f - r) - dk * kLn2Lo) - f);
}

// |x| <= pi/4
inline double sin_kernel(double x) {
  const double z = x * x;
  const double v = z * x;
  const double r = kS2 + z * (kS3 + z * (kS4 + z * (kS5 + z * kS6)));
  return x + v * (kS1 + z * r);
}

// |x| <= pi/4
inline double cos_kernel(double x) {
  const double z = x * x;
  const double r = z * (kC1 + z * (kC2 + z * (kC3 + z * (kC4 + z * (kC5 + z * kC6)))));
  const double hz = 0.5 * z;
  const double w = 1.0 - hz;
  return w + (((1.0 - w) - hz) + z * r);
}

// u1 in (0, 1] from the first two Philox words, u2 in [0, 1) from the last two.
inline double uniform_open_low(std::uint32_t w0, std::uint32_t w1) {
  const std::uint64_t v = (std::uint64_t{w1} << 32) | w0;
  return 2.0 - std::bit_cast<double>((v >> 12) | kOneBits);
}

inline double uniform_closed_low(std::uint32_t w0, std::uint32_t w1) {
  const std::uint64_t v = (std::uint64_t{w1} << 32) | w0;
  return std::bit_cast<double>((v >> 12) | kOneBits) - 1.0;
}

// Two standard normals from one Philox block.
inline void box_muller(double u1, double u2, double& z0, double& z1) {
  const double r = std::sqrt(-2.0 * log_positive(u1));
  const double t = 4.0 * u2;
  const double q = std::floor(t + 0.5);
  const double x = (t - q) * kHalfPi;
  const double s = sin_kernel(x);
  const double c = cos_kernel(x);
  double cos_t = c;
  double sin_t = s;
  if (q == 1.0) {
    cos_t = -s;
    sin_t = c;
  } else if (q == 2.0) {
    cos_t = -c;
    sin_t = -s;
  } else if (q == 3.0) {
    cos_t = s;
    sin_t = -c;
  }
  z0 = r * cos_t;
  z1 = r * sin_t;
}

}  // namespace fedzo::kernels::detail
