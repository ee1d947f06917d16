#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>

#include "fedzo/metrics.hpp"
#include "fedzo/model.hpp"

namespace fedzo {

inline constexpr std::uint64_t kBitsPerValue = 32;
inline constexpr std::uint64_t kBitsPerSeed = 64;

enum class CommMode { seed_trick, full_vector };

struct Bits {
  std::uint64_t up = 0;
  std::uint64_t down = 0;
  friend bool operator==(const Bits&, const Bits&) = default;
};

// Training round. seed trick: up = devices (32K + 64); full vector: up =
// devices 32n. Down = devices 32 round(d n), the masked model broadcast.
Bits comm_training_round(std::size_t n, double density, std::size_t k, CommMode mode, std::size_t devices);
// Same, with the surviving count given exactly.
Bits comm_training_round_kept(std::size_t n, std::size_t kept, std::size_t k, CommMode mode, std::size_t devices);

// Real-data pruning round: each device uploads its F_i draws and receives
// the current model. Data-free rounds contact no device.
Bits comm_pruning_round(bool data_free, std::size_t n, std::size_t mc_samples, std::size_t devices);

// Per-device total of a real-data pruning phase followed by the sparse
// model download: 32 T_p n + 32 d n.
double worst_case_pruning_bits(std::size_t rounds, std::size_t n, double density);

enum class MemoryMode { backprop, bp_free };

// Analytic peak bytes on a device, 4 bytes per stored value.
struct MemoryBreakdown {
  double params = 0.0;        // weights (density-scaled for bp-free)
  double mask = 0.0;          // 1 bit per parameter when sparse
  double activations = 0.0;   // retained blobs, or the widest live pair
  double gradients = 0.0;     // gradient + momentum buffers, activation grads
  double perturbation = 0.0;  // one layer's slice of δ
  double total() const { return params + mask + activations + gradients + perturbation; }
};

// backprop: params, parameter gradients and momentum (3 n values), plus
// every blob from the input onward kept with its gradient (2 values per
// activation). bp-free: density n values, the packed mask, the largest
// (input + output) pair of any layer, and one layer's perturbation.
MemoryBreakdown peak_memory_breakdown(const ModelSpec& spec, std::size_t batch, MemoryMode mode, double density);
double peak_memory_model(const ModelSpec& spec, std::size_t batch, MemoryMode mode, double density);

// Running totals over the metrics stream.
struct CostLedger {
  std::uint64_t up_bits = 0;
  std::uint64_t down_bits = 0;
  double flops = 0.0;
  std::uint64_t peak_mem_bytes = 0;
  std::size_t rounds = 0;

  void append(const RoundMetrics& m);
  friend bool operator==(const CostLedger&, const CostLedger&) = default;
};

CostLedger replay_ledger(std::span<const RoundMetrics> rows);
CostLedger replay_ledger(const std::filesystem::path& csv);

}  // namespace fedzo
