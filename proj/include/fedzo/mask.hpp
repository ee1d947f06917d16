#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedzo {

// Binary keep/prune vector aligned with ModelParams::flat().
class Mask {
 public:
  Mask() = default;
  explicit Mask(std::vector<std::uint8_t> bits);
  static Mask ones(std::size_t n) { return Mask(std::vector<std::uint8_t>(n, 1)); }

  std::size_t size() const noexcept { return bits_.size(); }
  std::size_t count() const noexcept { return count_; }
  // ||m||_0 / n
  double density() const noexcept;
  bool test(std::size_t j) const { return bits_[j] != 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  friend bool operator==(const Mask& a, const Mask& b) { return a.bits_ == b.bits_; }

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

}  // namespace fedzo
