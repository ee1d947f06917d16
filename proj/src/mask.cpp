#include "fedzo/mask.hpp"

#include "fedzo/error.hpp"

namespace fedzo {

Mask::Mask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (std::uint8_t& b : bits_) {
    if (b > 1) throw ValidationError("mask bits must be 0 or 1");
    count_ += b;
  }
}

double Mask::density() const noexcept {
  return bits_.empty() ? 1.0 : static_cast<double>(count_) / static_cast<double>(bits_.size());
}

}  // namespace fedzo
