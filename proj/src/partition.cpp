#include "fedzo/partition.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedzo/error.hpp"

namespace fedzo {

namespace {

void shuffle(std::vector<std::size_t>& v, RandomStream& rs) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rs.below(i)]);
}

void check_labels(std::span<const int> labels, std::size_t classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

std::vector<ClientPartition> finish(std::vector<std::vector<std::size_t>> buckets, std::span<const int> labels,
                                    std::size_t classes) {
  std::vector<ClientPartition> out(buckets.size());
  for (std::size_t d = 0; d < buckets.size(); ++d) {
    out[d].device_id = d;
    out[d].indices = std::move(buckets[d]);
    std::sort(out[d].indices.begin(), out[d].indices.end());
    out[d].label_histogram.assign(classes, 0);
    for (std::size_t i : out[d].indices) ++out[d].label_histogram[static_cast<std::size_t>(labels[i])];
  }
  return out;
}

}  // namespace

std::vector<ClientPartition> dirichlet_partition(std::span<const int> labels, std::size_t classes,
                                                 std::size_t devices, double beta, const SeededRng& rng,
                                                 std::size_t max_attempts) {
  if (!(beta > 0.0)) throw ValidationError("dirichlet beta must be > 0");
  if (devices == 0) throw ValidationError("device count must be >= 1");
  check_labels(labels, classes);
  const std::size_t n = labels.size();
  if (devices > n) {
    throw ValidationError("cannot give " + std::to_string(devices) + " devices a sample each from " +
                          std::to_string(n) + " samples");
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  const double cap = static_cast<double>(n) / static_cast<double>(devices);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    RandomStream rs(rng.derive({attempt}));
    std::vector<std::vector<std::size_t>> buckets(devices);
    std::vector<double> logp(devices), p(devices);
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<std::size_t> idx = by_class[c];
      shuffle(idx, rs);
      for (std::size_t d = 0; d < devices; ++d) logp[d] = rs.log_gamma_variate(beta);
      // Normalize in log space: shares of tiny-beta draws underflow otherwise.
      const double mx = *std::max_element(logp.begin(), logp.end());
      double total = 0.0;
      for (std::size_t d = 0; d < devices; ++d) {
        p[d] = static_cast<double>(buckets[d].size()) < cap ? std::exp(logp[d] - mx) : 0.0;
        total += p[d];
      }
      if (total == 0.0) {
        for (std::size_t d = 0; d < devices; ++d) p[d] = std::exp(logp[d] - mx);
        total = 0.0;
        for (double v : p) total += v;
      }
      double cum = 0.0;
      std::size_t begin = 0;
      for (std::size_t d = 0; d < devices; ++d) {
        cum += p[d] / total;
        const std::size_t end =
            d + 1 == devices ? idx.size()
                             : std::min(idx.size(), static_cast<std::size_t>(cum * static_cast<double>(idx.size())));
        for (std::size_t j = begin; j < std::max(begin, end); ++j) buckets[d].push_back(idx[j]);
        begin = std::max(begin, end);
      }
    }
    const bool ok = std::all_of(buckets.begin(), buckets.end(), [](const auto& b) { return !b.empty(); });
    if (ok) return finish(std::move(buckets), labels, classes);
  }
  throw ValidationError("dirichlet partition: some device stayed empty after " + std::to_string(max_attempts) +
                        " attempts (devices=" + std::to_string(devices) + ", samples=" + std::to_string(n) + ")");
}

std::vector<ClientPartition> uniform_partition(std::span<const int> labels, std::size_t classes,
                                               std::size_t devices, const SeededRng& rng) {
  if (devices == 0 || devices > labels.size()) throw ValidationError("device count must lie in [1, N]");
  check_labels(labels, classes);
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  RandomStream rs(rng);
  shuffle(idx, rs);
  std::vector<std::vector<std::size_t>> buckets(devices);
  for (std::size_t d = 0; d < devices; ++d) {
    const std::size_t b = d * idx.size() / devices, e = (d + 1) * idx.size() / devices;
    buckets[d].assign(idx.begin() + static_cast<std::ptrdiff_t>(b), idx.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return finish(std::move(buckets), labels, classes);
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, const SeededRng& rng) {
  if (count > n) throw ValidationError("cannot sample " + std::to_string(count) + " of " + std::to_string(n));
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  RandomStream rs(rng);
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rs.below(n - i)]);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace fedzo
