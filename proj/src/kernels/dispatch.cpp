#include <cstdlib>
#include <string_view>

#include "fedzo/kernels.hpp"

namespace fedzo::kernels {

#if !defined(FEDZO_HAVE_AVX2)
const KernelTable* avx2() { return nullptr; }
#endif

const KernelTable& active() {
  static const KernelTable& chosen = [&]() -> const KernelTable& {
    const char* env = std::getenv("FEDZO_KERNELS");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar();
    if (const KernelTable* t = avx2()) return *t;
    return scalar();
  }();
  return chosen;
}

}  // namespace fedzo::kernels
