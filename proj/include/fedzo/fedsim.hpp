#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedzo/accounting.hpp"
#include "fedzo/dataset.hpp"
#include "fedzo/mask.hpp"
#include "fedzo/metrics.hpp"
#include "fedzo/model.hpp"
#include "fedzo/partition.hpp"
#include "fedzo/zo.hpp"

namespace fedzo {

struct ServerState {
  ModelParams params;
  Mask mask;
  std::vector<double> momentum;  // zero wherever the mask is zero
  double lr = 0.0;
  std::size_t round = 0;

  friend bool operator==(const ServerState&, const ServerState&) = default;
};

// Starts at W ⊙ m so pruned weights are exactly zero from round 0.
ServerState make_server_state(const ModelSpec& spec, ModelParams params, Mask mask, double lr);

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double decay = 0.998;  // lr multiplier applied after every round

  void validate() const;
};

struct RoundPlan {
  std::size_t round = 0;
  std::vector<std::size_t> selected;     // ascending device ids
  std::vector<PerturbationSpec> pspecs;  // one per selected device
  std::vector<std::uint8_t> dropped;     // 1 = device failed this round
};

// Samples `per_round` of `devices` without replacement. Device i's
// perturbation seed is a hash of (rng, round, i); the seeds are pairwise
// distinct within the round.
RoundPlan make_round_plan(const SeededRng& rng, std::size_t round, std::size_t devices, std::size_t per_round,
                          double sigma, std::size_t k, Difference difference = Difference::one_sided,
                          double dropout = 0.0);

struct TrainingConfig {
  std::size_t batch_size = 32;
  CommMode comm = CommMode::seed_trick;
  OptimizerConfig opt;
};

// What a device sends in one BP-free round.
struct DeviceUpload {
  std::size_t device = 0;
  std::size_t samples = 0;  // N_i
  DeltaLossVector dlv;
  std::uint64_t seed = 0;
  std::vector<double> estimate;  // full-vector mode only
  double base_loss = 0.0;
  std::size_t batch = 0;
};

// Device side of a BP-free round: one local mini-batch, K + 1 forwards.
DeviceUpload device_round(const ModelSpec& spec, const ServerState& state, const ClientPartition& part,
                          const DatasetHandle& data, const PerturbationSpec& pspec, std::size_t round,
                          const TrainingConfig& cfg);

// Σ_i (N_i / Σ_j N_j) ĝ_i over the uploads, in order, each ĝ_i regenerated
// from its seed (seed trick) or taken from the upload (full vector).
std::vector<double> aggregate_estimates(std::span<const DeviceUpload> uploads, std::span<const PerturbationSpec> pspecs,
                                        const Mask& mask, CommMode mode);

// v = μ v + (g + λ W), W -= lr v on unmasked coordinates; lr *= decay.
void apply_server_update(ServerState& state, std::span<const double> grad, const OptimizerConfig& opt);

// One BP-free round. When `eval` is given its accuracy lands in the
// metrics; loss is the weighted mean base loss of the participating
// devices. flops_cum is this round's device FLOPs only.
std::pair<ServerState, RoundMetrics> run_training_round(const ModelSpec& spec, const ServerState& state,
                                                        const RoundPlan& plan,
                                                        std::span<const ClientPartition> partitions,
                                                        const DatasetHandle& data, const TrainingConfig& cfg,
                                                        const DatasetHandle* eval = nullptr);

// Local SGD with true gradients for `epochs` passes over each device's
// data, then N_i-weighted parameter averaging.
std::pair<ServerState, RoundMetrics> run_fedavg_baseline(const ModelSpec& spec, const ServerState& state,
                                                         const RoundPlan& plan,
                                                         std::span<const ClientPartition> partitions,
                                                         const DatasetHandle& data, std::size_t epochs,
                                                         const TrainingConfig& cfg,
                                                         const DatasetHandle* eval = nullptr);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const DatasetHandle& data,
                    std::size_t chunk = 512);

}  // namespace fedzo
