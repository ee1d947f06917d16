#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel inner loops. Every kernel has a portable scalar reference;
// SIMD variants are selected once at startup from CPU features and can be
// forced back to the reference with FEDZO_KERNELS=scalar.
//
// Equivalence contract (checked by tests/test_kernels.cpp):
//   fill_normal, axpy   bit-identical across variants
//   dot, gemv           equal up to summation-order rounding

namespace fedzo::kernels {

struct KernelTable {
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // y[r] = dot(w + r * cols, x) for r < rows
  void (*gemv)(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y);

  // out[i] = z(first + i): standard normals of the counter-based stream
  // (seed, stream). Element j comes from Philox block j / 2 through a
  // Box-Muller transform built only from IEEE-exact primitives, so every
  // variant reproduces it bit for bit.
  void (*fill_normal)(std::uint64_t seed, std::uint64_t stream, std::uint64_t first, double* out,
                      std::size_t count);
};

const KernelTable& scalar();

// nullptr when not compiled in or not supported by this CPU.
const KernelTable* avx2();

const KernelTable& active();

}  // namespace fedzo::kernels
