#include "fedzo/kernels.hpp"
#include "fedzo/philox.hpp"
#include "kernels/normal_math.hpp"

namespace fedzo::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_scalar(w + r * cols, x, cols);
}

void fill_normal_scalar(std::uint64_t seed, std::uint64_t stream, std::uint64_t first, double* out,
                        std::size_t count) {
  const PhiloxKey key = philox_key(seed);
  std::size_t i = 0;
  while (i < count) {
    const std::uint64_t j = first + i;
    const PhiloxCounter w = philox4x32(philox_counter(j >> 1, stream), key);
    double z0 = 0.0;
    double z1 = 0.0;
    detail::box_muller(detail::uniform_open_low(w[0], w[1]), detail::uniform_closed_low(w[2], w[3]),
                       z0, z1);
    if ((j & 1) == 0) {
      out[i++] = z0;
      if (i < count) out[i++] = z1;
    } else {
      out[i++] = z1;
    }
  }
}

}  // namespace

const KernelTable& scalar() {
  static const KernelTable table{"scalar", &dot_scalar, &axpy_scalar, &gemv_scalar,
                                 &fill_normal_scalar};
  return table;
}

}  // namespace fedzo::kernels
