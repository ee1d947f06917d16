// AVX2 variants. This translation unit alone is compiled with -mavx2 and is
// only entered after a runtime CPUID check. No FMA: fused multiply-add would
// round differently from the scalar reference.

#include <immintrin.h>

#include <cstdint>

#include "fedzo/kernels.hpp"
#include "fedzo/philox.hpp"
#include "kernels/normal_math.hpp"

namespace fedzo::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    acc2 = _mm256_add_pd(acc2, _mm256_mul_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8)));
    acc3 =
        _mm256_add_pd(acc3, _mm256_mul_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12)));
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  double s = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d y0 = _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    const __m256d y1 =
        _mm256_add_pd(_mm256_loadu_pd(y + i + 4), _mm256_mul_pd(va, _mm256_loadu_pd(x + i + 4)));
    _mm256_storeu_pd(y + i, y0);
    _mm256_storeu_pd(y + i + 4, y1);
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_avx2(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const double* w0 = w + r * cols;
    const double* w1 = w0 + cols;
    const double* w2 = w1 + cols;
    const double* w3 = w2 + cols;
    __m256d a0 = _mm256_setzero_pd();
    __m256d a1 = _mm256_setzero_pd();
    __m256d a2 = _mm256_setzero_pd();
    __m256d a3 = _mm256_setzero_pd();
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      const __m256d xv = _mm256_loadu_pd(x + c);
      a0 = _mm256_add_pd(a0, _mm256_mul_pd(_mm256_loadu_pd(w0 + c), xv));
      a1 = _mm256_add_pd(a1, _mm256_mul_pd(_mm256_loadu_pd(w1 + c), xv));
      a2 = _mm256_add_pd(a2, _mm256_mul_pd(_mm256_loadu_pd(w2 + c), xv));
      a3 = _mm256_add_pd(a3, _mm256_mul_pd(_mm256_loadu_pd(w3 + c), xv));
    }
    double s0 = hsum(a0);
    double s1 = hsum(a1);
    double s2 = hsum(a2);
    double s3 = hsum(a3);
    for (; c < cols; ++c) {
      s0 += w0[c] * x[c];
      s1 += w1[c] * x[c];
      s2 += w2[c] * x[c];
      s3 += w3[c] * x[c];
    }
    y[r] = s0;
    y[r + 1] = s1;
    y[r + 2] = s2;
    y[r + 3] = s3;
  }
  for (; r < rows; ++r) y[r] = dot_avx2(w + r * cols, x, cols);
}

// ---- counter-based normals -------------------------------------------------

struct Philox8 {
  __m256i c0, c1, c2, c3;
};

inline void mulhilo8(__m256i a, __m256i m, __m256i& hi, __m256i& lo) {
  const __m256i even = _mm256_mul_epu32(a, m);
  const __m256i odd = _mm256_mul_epu32(_mm256_srli_epi64(a, 32), m);
  lo = _mm256_blend_epi32(even, _mm256_slli_epi64(odd, 32), 0b10101010);
  hi = _mm256_blend_epi32(_mm256_srli_epi64(even, 32), odd, 0b10101010);
}

inline Philox8 philox8(Philox8 c, std::uint64_t seed) {
  __m256i k0 = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(seed)));
  __m256i k1 = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(seed >> 32)));
  const __m256i m0 = _mm256_set1_epi32(static_cast<int>(kPhiloxM0));
  const __m256i m1 = _mm256_set1_epi32(static_cast<int>(kPhiloxM1));
  const __m256i w0 = _mm256_set1_epi32(static_cast<int>(kPhiloxW0));
  const __m256i w1 = _mm256_set1_epi32(static_cast<int>(kPhiloxW1));
  for (int r = 0; r < kPhiloxRounds; ++r) {
    if (r) {
      k0 = _mm256_add_epi32(k0, w0);
      k1 = _mm256_add_epi32(k1, w1);
    }
    __m256i hi0, lo0, hi1, lo1;
    mulhilo8(c.c0, m0, hi0, lo0);
    mulhilo8(c.c2, m1, hi1, lo1);
    c = {_mm256_xor_si256(_mm256_xor_si256(hi1, c.c1), k0), lo1,
         _mm256_xor_si256(_mm256_xor_si256(hi0, c.c3), k1), lo0};
  }
  return c;
}

inline __m256d uniform_bits(const std::uint32_t* lo_words, const std::uint32_t* hi_words) {
  const __m256i lo = _mm256_cvtepu32_epi64(_mm_loadu_si128(reinterpret_cast<const __m128i*>(lo_words)));
  const __m256i hi = _mm256_cvtepu32_epi64(_mm_loadu_si128(reinterpret_cast<const __m128i*>(hi_words)));
  const __m256i v = _mm256_or_si256(lo, _mm256_slli_epi64(hi, 32));
  const __m256i one = _mm256_set1_epi64x(static_cast<long long>(detail::kOneBits));
  return _mm256_castsi256_pd(_mm256_or_si256(_mm256_srli_epi64(v, 12), one));
}

inline __m256d log_positive8(__m256d x) {
  using namespace detail;
  const __m256i bits = _mm256_castpd_si256(x);
  __m256i hx = _mm256_srli_epi64(bits, 32);
  const __m256i lo = _mm256_and_si256(bits, _mm256_set1_epi64x(0xFFFFFFFFll));
  __m256i k = _mm256_sub_epi64(_mm256_srli_epi64(hx, 20), _mm256_set1_epi64x(1023));
  hx = _mm256_and_si256(hx, _mm256_set1_epi64x(0x000FFFFFll));
  const __m256i i =
      _mm256_and_si256(_mm256_add_epi64(hx, _mm256_set1_epi64x(0x95F64ll)), _mm256_set1_epi64x(0x100000ll));
  const __m256i new_hi = _mm256_or_si256(hx, _mm256_xor_si256(i, _mm256_set1_epi64x(0x3FF00000ll)));
  k = _mm256_add_epi64(k, _mm256_srli_epi64(i, 20));
  const __m256d m = _mm256_castsi256_pd(_mm256_or_si256(_mm256_slli_epi64(new_hi, 32), lo));
  const __m256d dk = _mm256_sub_pd(
      _mm256_castsi256_pd(_mm256_add_epi64(k, _mm256_set1_epi64x(static_cast<long long>(kMagicBits)))),
      _mm256_set1_pd(kMagic));

  const __m256d f = _mm256_sub_pd(m, _mm256_set1_pd(1.0));
  const __m256d s = _mm256_div_pd(f, _mm256_add_pd(_mm256_set1_pd(2.0), f));
  const __m256d z = _mm256_mul_pd(s, s);
  const __m256d w = _mm256_mul_pd(z, z);
  auto c = [](double v) { return _mm256_set1_pd(v); };
  const __m256d t1 = _mm256_mul_pd(
      w, _mm256_add_pd(c(kLg2), _mm256_mul_pd(w, _mm256_add_pd(c(kLg4), _mm256_mul_pd(w, c(kLg6))))));
  const __m256d t2 = _mm256_mul_pd(
      z, _mm256_add_pd(
             c(kLg1),
             _mm256_mul_pd(w, _mm256_add_pd(c(kLg3), _mm256_mul_pd(w, _mm256_add_pd(
                                                                           c(kLg5), _mm256_mul_pd(w, c(kLg7))))))));
  const __m256d r = _mm256_add_pd(t2, t1);
  const __m256d inner =
      _mm256_sub_pd(_mm256_sub_pd(_mm256_mul_pd(s, _mm256_sub_pd(f, r)), _mm256_mul_pd(dk, c(kLn2Lo))), f);
  return _mm256_sub_pd(_mm256_mul_pd(dk, c(kLn2Hi)), inner);
}

inline __m256d sin_kernel8(__m256d x) {
  using namespace detail;
  auto c = [](double v) { return _mm256_set1_pd(v); };
  const __m256d z = _mm256_mul_pd(x, x);
  const __m256d v = _mm256_mul_pd(z, x);
  const __m256d r = _mm256_add_pd(
      c(kS2),
      _mm256_mul_pd(z, _mm256_add_pd(c(kS3), _mm256_mul_pd(z, _mm256_add_pd(
                                                                  c(kS4), _mm256_mul_pd(z, _mm256_add_pd(
                                                                                               c(kS5), _mm256_mul_pd(z, c(kS6)))))))));
  return _mm256_add_pd(x, _mm256_mul_pd(v, _mm256_add_pd(c(kS1), _mm256_mul_pd(z, r))));
}

inline __m256d cos_kernel8(__m256d x) {
  using namespace detail;
  auto c = [](double v) { return _mm256_set1_pd(v); };
  const __m256d z = _mm256_mul_pd(x, x);
  __m256d p = _mm256_add_pd(c(kC5), _mm256_mul_pd(z, c(kC6)));
  p = _mm256_add_pd(c(kC4), _mm256_mul_pd(z, p));
  p = _mm256_add_pd(c(kC3), _mm256_mul_pd(z, p));
  p = _mm256_add_pd(c(kC2), _mm256_mul_pd(z, p));
  p = _mm256_add_pd(c(kC1), _mm256_mul_pd(z, p));
  const __m256d r = _mm256_mul_pd(z, p);
  const __m256d hz = _mm256_mul_pd(c(0.5), z);
  const __m256d w = _mm256_sub_pd(c(1.0), hz);
  return _mm256_add_pd(w, _mm256_add_pd(_mm256_sub_pd(_mm256_sub_pd(c(1.0), w), hz), _mm256_mul_pd(z, r)));
}

// Four blocks -> eight normals in output order.
inline void box_muller8(__m256d u1, __m256d u2, double* out) {
  using namespace detail;
  const __m256d sign = _mm256_set1_pd(-0.0);
  const __m256d r = _mm256_sqrt_pd(_mm256_mul_pd(_mm256_set1_pd(-2.0), log_positive8(u1)));
  const __m256d t = _mm256_mul_pd(_mm256_set1_pd(4.0), u2);
  const __m256d q = _mm256_floor_pd(_mm256_add_pd(t, _mm256_set1_pd(0.5)));
  const __m256d x = _mm256_mul_pd(_mm256_sub_pd(t, q), _mm256_set1_pd(kHalfPi));
  const __m256d s = sin_kernel8(x);
  const __m256d c = cos_kernel8(x);
  const __m256d ns = _mm256_xor_pd(s, sign);
  const __m256d nc = _mm256_xor_pd(c, sign);

  const __m256d q1 = _mm256_cmp_pd(q, _mm256_set1_pd(1.0), _CMP_EQ_OQ);
  const __m256d q2 = _mm256_cmp_pd(q, _mm256_set1_pd(2.0), _CMP_EQ_OQ);
  const __m256d q3 = _mm256_cmp_pd(q, _mm256_set1_pd(3.0), _CMP_EQ_OQ);
  __m256d cos_t = c;
  __m256d sin_t = s;
  cos_t = _mm256_blendv_pd(cos_t, ns, q1);
  sin_t = _mm256_blendv_pd(sin_t, c, q1);
  cos_t = _mm256_blendv_pd(cos_t, nc, q2);
  sin_t = _mm256_blendv_pd(sin_t, ns, q2);
  cos_t = _mm256_blendv_pd(cos_t, s, q3);
  sin_t = _mm256_blendv_pd(sin_t, nc, q3);

  const __m256d z0 = _mm256_mul_pd(r, cos_t);
  const __m256d z1 = _mm256_mul_pd(r, sin_t);
  const __m256d lo = _mm256_unpacklo_pd(z0, z1);
  const __m256d hi = _mm256_unpackhi_pd(z0, z1);
  _mm256_storeu_pd(out, _mm256_permute2f128_pd(lo, hi, 0x20));
  _mm256_storeu_pd(out + 4, _mm256_permute2f128_pd(lo, hi, 0x31));
}

void fill_normal_avx2(std::uint64_t seed, std::uint64_t stream, std::uint64_t first, double* out,
                      std::size_t count) {
  std::size_t i = 0;
  // Head: reach an even index so blocks align with output pairs.
  if ((first & 1) && count > 0) {
    scalar().fill_normal(seed, stream, first, out, 1);
    i = 1;
  }
  alignas(32) std::uint32_t words[4][8];
  alignas(32) std::uint32_t ctr_lo[8];
  alignas(32) std::uint32_t ctr_hi[8];
  const __m256i s_lo = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(stream)));
  const __m256i s_hi = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(stream >> 32)));
  while (i + 16 <= count) {
    const std::uint64_t block = (first + i) >> 1;
    for (int l = 0; l < 8; ++l) {
      const std::uint64_t b = block + static_cast<std::uint64_t>(l);
      ctr_lo[l] = static_cast<std::uint32_t>(b);
      ctr_hi[l] = static_cast<std::uint32_t>(b >> 32);
    }
    Philox8 c{_mm256_load_si256(reinterpret_cast<const __m256i*>(ctr_lo)),
              _mm256_load_si256(reinterpret_cast<const __m256i*>(ctr_hi)), s_lo, s_hi};
    c = philox8(c, seed);
    _mm256_store_si256(reinterpret_cast<__m256i*>(words[0]), c.c0);
    _mm256_store_si256(reinterpret_cast<__m256i*>(words[1]), c.c1);
    _mm256_store_si256(reinterpret_cast<__m256i*>(words[2]), c.c2);
    _mm256_store_si256(reinterpret_cast<__m256i*>(words[3]), c.c3);
    for (int g = 0; g < 2; ++g) {
      const __m256d d1 = uniform_bits(words[0] + 4 * g, words[1] + 4 * g);
      const __m256d d2 = uniform_bits(words[2] + 4 * g, words[3] + 4 * g);
      const __m256d u1 = _mm256_sub_pd(_mm256_set1_pd(2.0), d1);
      const __m256d u2 = _mm256_sub_pd(d2, _mm256_set1_pd(1.0));
      box_muller8(u1, u2, out + i + 8 * g);
    }
    i += 16;
  }
  if (i < count) scalar().fill_normal(seed, stream, first + i, out + i, count - i);
}

}  // namespace

const KernelTable* avx2() {
  static const KernelTable table{"avx2", &dot_avx2, &axpy_avx2, &gemv_avx2, &fill_normal_avx2};
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

}  // namespace fedzo::kernels
