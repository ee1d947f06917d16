#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedzo/rng.hpp"

namespace fedzo {

struct ClientPartition {
  std::size_t device_id = 0;
  std::vector<std::size_t> indices;  // ascending
  std::vector<std::size_t> label_histogram;

  std::size_t size() const noexcept { return indices.size(); }
};

// Label-skewed split: for every class, device shares are drawn from
// Dirichlet(beta, ..., beta). Devices already holding N/m samples take no
// further shares. The whole draw is repeated (up to max_attempts) until
// every device holds at least one sample.
std::vector<ClientPartition> dirichlet_partition(std::span<const int> labels, std::size_t classes,
                                                 std::size_t devices, double beta, const SeededRng& rng,
                                                 std::size_t max_attempts = 1000);

// Contiguous equal shards of a shuffled index set (the IID case).
std::vector<ClientPartition> uniform_partition(std::span<const int> labels, std::size_t classes,
                                               std::size_t devices, const SeededRng& rng);

// Sorted sample of `count` distinct values from [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, const SeededRng& rng);

}  // namespace fedzo
