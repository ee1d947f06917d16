#include "fedzo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "fedzo/error.hpp"

namespace fedzo {

std::vector<std::size_t> DatasetHandle::sample_shape() const {
  return {inputs.shape().begin() + 1, inputs.shape().end()};
}

Tensor gather_rows(const Tensor& inputs, std::span<const std::size_t> idx) {
  if (inputs.rank() == 0) throw ShapeError("cannot gather rows of a scalar");
  std::vector<std::size_t> shape(inputs.shape().begin(), inputs.shape().end());
  const std::size_t row = inputs.slice_size();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= inputs.extent(0)) throw ShapeError("row index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(inputs.raw() + idx[r] * row, row, out.raw() + r * row);
  }
  return out;
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = labels[idx[r]];
  return out;
}

namespace {

// groups = channels for images, features otherwise; `inner` values per
// group per sample.
void channel_layout(const Tensor& t, std::size_t& groups, std::size_t& inner) {
  if (t.rank() == 4) {
    groups = t.extent(1);
    inner = t.extent(2) * t.extent(3);
  } else {
    groups = t.slice_size();
    inner = 1;
  }
}

void apply(Tensor& t, const std::vector<double>& mean, const std::vector<double>& inv_std) {
  if (t.size() == 0) return;
  std::size_t groups = 0, inner = 0;
  channel_layout(t, groups, inner);
  const std::size_t n = t.extent(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      double* p = t.raw() + (i * groups + g) * inner;
      for (std::size_t k = 0; k < inner; ++k) p[k] = (p[k] - mean[g]) * inv_std[g];
    }
  }
}

}  // namespace

void normalize_with_train_stats(DatasetSplit& split) {
  Tensor& tr = split.train.inputs;
  if (tr.rank() < 2 || tr.extent(0) == 0) throw ShapeError("training inputs must be (N, ...) with N > 0");
  std::size_t groups = 0, inner = 0;
  channel_layout(tr, groups, inner);
  const std::size_t n = tr.extent(0);
  std::vector<double> mean(groups, 0.0), inv_std(groups, 1.0);
  const double count = static_cast<double>(n * inner);
  for (std::size_t g = 0; g < groups; ++g) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = tr.raw() + (i * groups + g) * inner;
      for (std::size_t k = 0; k < inner; ++k) s += p[k];
    }
    mean[g] = s / count;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = tr.raw() + (i * groups + g) * inner;
      for (std::size_t k = 0; k < inner; ++k) ss += (p[k] - mean[g]) * (p[k] - mean[g]);
    }
    const double sd = std::sqrt(ss / count);
    inv_std[g] = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  apply(tr, mean, inv_std);
  apply(split.test.inputs, mean, inv_std);
}

void parse_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source, std::size_t records,
                         std::vector<double>& pixels, std::vector<int>& labels) {
  const std::size_t expected = records * kCifarRecordBytes;
  if (bytes.size() != expected) {
    throw CorruptDataError(source + ": expected " + std::to_string(expected) + " bytes, file " +
                           (bytes.size() < expected ? "ends" : "continues past the end") + " at byte offset " +
                           std::to_string(std::min(bytes.size(), expected)));
  }
  pixels.reserve(pixels.size() + records * (kCifarRecordBytes - 1));
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    if (bytes[off] >= 10) {
      throw CorruptDataError(source + ": label byte " + std::to_string(bytes[off]) + " at byte offset " +
                             std::to_string(off));
    }
    labels.push_back(bytes[off]);
    for (std::size_t k = 1; k < kCifarRecordBytes; ++k) pixels.push_back(bytes[off + k] / 255.0);
  }
}

namespace {

void read_batch(const std::filesystem::path& file, std::vector<double>& pixels, std::vector<int>& labels) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError(file.string() + ": cannot open CIFAR-10 batch file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  parse_cifar_records(bytes, file.string(), kCifarBatchRecords, pixels, labels);
}

DatasetHandle cifar_handle(std::vector<double> pixels, std::vector<int> labels) {
  DatasetHandle h;
  const std::size_t n = labels.size();
  h.inputs = Tensor({n, 3, 32, 32}, std::move(pixels));
  h.labels = std::move(labels);
  h.classes = 10;
  return h;
}

}  // namespace

DatasetSplit load_cifar10(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<double> px;
  std::vector<int> lb;
  for (int b = 1; b <= 5; ++b) read_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"), px, lb);
  DatasetSplit split;
  split.train = cifar_handle(std::move(px), std::move(lb));
  px.clear();
  lb.clear();
  read_batch(dir / "test_batch.bin", px, lb);
  split.test = cifar_handle(std::move(px), std::move(lb));
  normalize_with_train_stats(split);
  return split;
}

namespace {

DatasetHandle blobs(const SyntheticSpec& spec, std::size_t per_class, const SeededRng& rng) {
  const std::size_t n = spec.classes * per_class;
  DatasetHandle h;
  h.classes = spec.classes;
  h.inputs = Tensor({n, spec.dims});
  gaussian_fill(rng, 0, h.inputs.data());
  h.labels.resize(n);
  const double offset = spec.separation / std::sqrt(2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % spec.classes;
    h.labels[i] = static_cast<int>(c);
    h.inputs[i * spec.dims + c] += offset;
  }
  return h;
}

}  // namespace

DatasetSplit gen_synthetic(const SyntheticSpec& spec, const SeededRng& rng) {
  if (spec.per_class == 0) throw ValidationError("synthetic dataset needs per_class >= 1");
  if (spec.classes < 2) throw ValidationError("synthetic dataset needs at least 2 classes");
  if (spec.classes > spec.dims) {
    throw ValidationError("synthetic dataset needs classes <= dims (one mean axis per class)");
  }
  if (!(spec.separation >= 0.0)) throw ValidationError("separation must be >= 0");
  DatasetSplit split;
  split.train = blobs(spec, spec.per_class, rng.derive({0}));
  split.test = blobs(spec, std::max<std::size_t>(1, spec.test_per_class), rng.derive({1}));
  normalize_with_train_stats(split);
  return split;
}

}  // namespace fedzo
