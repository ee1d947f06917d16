#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <span>
#include <vector>

#include "fedzo/rng.hpp"
#include "fedzo/tensor.hpp"

namespace fedzo {

struct DatasetHandle {
  Tensor inputs;  // (N, sample shape...)
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::vector<std::size_t> sample_shape() const;
};

struct DatasetSplit {
  DatasetHandle train;
  DatasetHandle test;
};

// Rows `idx` of `inputs`, in order.
Tensor gather_rows(const Tensor& inputs, std::span<const std::size_t> idx);
std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> idx);

// Per-channel (axis 1 of a rank-4 input, else per feature) mean and
// standard deviation of `train`; both splits are shifted and scaled by them.
void normalize_with_train_stats(DatasetSplit& split);

// CIFAR-10 binary version: data_batch_{1..5}.bin and test_batch.bin, each
// 10000 records of 1 label byte + 3072 pixel bytes (R, G, B planes).
// Pixels are scaled to [0, 1] then normalized with training statistics.
DatasetSplit load_cifar10(const std::filesystem::path& dir);
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarBatchRecords = 10000;
inline constexpr std::size_t kCifarBatchBytes = kCifarBatchRecords * kCifarRecordBytes;

// Decodes `records` CIFAR records from `bytes` (named `source` in errors)
// and appends them to `pixels` (3072 values each, scaled to [0, 1]) and
// `labels`.
void parse_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source, std::size_t records,
                         std::vector<double>& pixels, std::vector<int>& labels);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t dims = 32;
  std::size_t per_class = 200;       // training samples per class
  std::size_t test_per_class = 100;
  double separation = 4.0;           // distance between class means, in noise std

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

// Isotropic unit-variance Gaussian blobs. Class c has mean
// (separation / sqrt 2) e_c, so any two means are `separation` apart.
// Normalized with training statistics.
DatasetSplit gen_synthetic(const SyntheticSpec& spec, const SeededRng& rng);

}  // namespace fedzo
