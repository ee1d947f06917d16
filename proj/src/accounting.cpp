#include "fedzo/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedzo/error.hpp"

namespace fedzo {

namespace {

void check_density(double d) {
  if (!(d > 0.0 && d <= 1.0)) throw ValidationError("density must lie in (0, 1], got " + std::to_string(d));
}

}  // namespace

Bits comm_training_round_kept(std::size_t n, std::size_t kept, std::size_t k, CommMode mode, std::size_t devices) {
  if (kept == 0 || kept > n) throw ValidationError("surviving count must lie in [1, n]");
  Bits b;
  const std::uint64_t dev = devices;
  b.up = mode == CommMode::seed_trick ? dev * (kBitsPerValue * k + kBitsPerSeed) : dev * kBitsPerValue * n;
  b.down = dev * kBitsPerValue * kept;
  return b;
}

Bits comm_training_round(std::size_t n, double density, std::size_t k, CommMode mode, std::size_t devices) {
  check_density(density);
  const auto kept = static_cast<std::size_t>(std::llround(density * static_cast<double>(n)));
  return comm_training_round_kept(n, std::max<std::size_t>(kept, 1), k, mode, devices);
}

Bits comm_pruning_round(bool data_free, std::size_t n, std::size_t mc_samples, std::size_t devices) {
  if (data_free) return {};
  return {devices * kBitsPerValue * mc_samples, devices * kBitsPerValue * n};
}

double worst_case_pruning_bits(std::size_t rounds, std::size_t n, double density) {
  check_density(density);
  const double nn = static_cast<double>(n);
  return 32.0 * static_cast<double>(rounds) * nn + 32.0 * density * nn;
}

MemoryBreakdown peak_memory_breakdown(const ModelSpec& spec, std::size_t batch, MemoryMode mode, double density) {
  check_density(density);
  if (batch == 0) throw ValidationError("batch must be >= 1");
  const auto shapes = infer_shapes(spec);
  const double n = static_cast<double>(param_count(spec));
  const double b = static_cast<double>(batch);
  constexpr double kBytes = 4.0;
  MemoryBreakdown m;
  if (mode == MemoryMode::backprop) {
    double blobs = static_cast<double>(shape_product(spec.input_shape));
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (spec.layers[i].kind != LayerKind::flatten) blobs += static_cast<double>(shape_product(shapes[i]));
    }
    m.params = kBytes * n;
    m.gradients = kBytes * 2.0 * n + kBytes * b * blobs;
    m.activations = kBytes * b * blobs;
    return m;
  }
  double widest = 0.0;
  std::size_t in = shape_product(spec.input_shape);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::size_t out = shape_product(shapes[i]);
    widest = std::max(widest, static_cast<double>(in + out));
    in = out;
  }
  double largest_segment = 0.0;
  for (const auto& s : param_layout(spec)) largest_segment = std::max(largest_segment, static_cast<double>(s.length));
  m.params = density * (kBytes * n);
  m.mask = density < 1.0 ? std::ceil(n / 8.0) : 0.0;
  m.activations = kBytes * b * widest;
  m.perturbation = density * (kBytes * largest_segment);
  return m;
}

double peak_memory_model(const ModelSpec& spec, std::size_t batch, MemoryMode mode, double density) {
  return peak_memory_breakdown(spec, batch, mode, density).total();
}

void CostLedger::append(const RoundMetrics& m) {
  up_bits += m.up_bits;
  down_bits += m.down_bits;
  flops = std::max(flops, m.flops_cum);
  peak_mem_bytes = std::max(peak_mem_bytes, m.peak_mem_model_bytes);
  ++rounds;
}

CostLedger replay_ledger(std::span<const RoundMetrics> rows) {
  CostLedger l;
  for (const auto& r : rows) l.append(r);
  return l;
}

CostLedger replay_ledger(const std::filesystem::path& csv) {
  const auto rows = read_metrics_csv(csv);
  return replay_ledger(rows);
}

}  // namespace fedzo
