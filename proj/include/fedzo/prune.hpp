#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedzo/dataset.hpp"
#include "fedzo/mask.hpp"
#include "fedzo/model.hpp"
#include "fedzo/partition.hpp"
#include "fedzo/rng.hpp"
#include "fedzo/tensor.hpp"

namespace fedzo {

struct ProbeBatch {
  enum class Origin { real_device, synthetic_gaussian };
  Tensor inputs;  // (batch, input shape...)
  Origin origin = Origin::synthetic_gaussian;
  std::size_t device = 0;  // meaningful for real_device
};

// `count` i.i.d. standard-normal inputs in the model's input shape.
ProbeBatch synthetic_probe(const ModelSpec& spec, std::size_t count, const SeededRng& rng);

// Per-coordinate std of the pruning perturbation ΔW: eps_scale times the
// init weight std sqrt(2 / fan_in) of the owning layer. Biases are not
// perturbed.
std::vector<double> perturbation_std(const ModelSpec& spec, double eps_scale);

// ‖f(x; W⊙m) − f(x; (W + ΔW)⊙m)‖² summed over the probe batch, with
// ΔW_j = noise_std[j] · z_j drawn from `rng`. Two inference forwards.
double fd_squared_norm(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const ProbeBatch& probe,
                       std::span<const double> noise_std, const SeededRng& rng);
// ΔW ~ N(0, eps I) on the weights; eps = 0 gives 0.
double fd_squared_norm(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const ProbeBatch& probe,
                       double eps, const SeededRng& rng);

struct SaliencyReport {
  std::vector<double> scores;  // |∂I/∂W_j · W_j|, 0 at pruned coordinates
  std::size_t round = 0;
  double threshold = 0.0;  // filled in by prune_round
};

// I = (1/N) Σ_i (1/S) Σ_s F_i(ΔW_s) over the N probe batches and S =
// mc_samples draws ΔW_s (stream rng.derive({s})), ΔW masked with the current
// mask and held fixed. The derivative is taken by reverse mode.
SaliencyReport saliency_scores(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                               std::span<const ProbeBatch> probes, std::span<const double> noise_std,
                               std::size_t mc_samples, const SeededRng& rng);

// The objective I itself, with the same draws; used by finite-difference
// checks.
double saliency_objective(const ModelSpec& spec, std::span<const double> effective, const Mask& mask,
                          std::span<const ProbeBatch> probes, std::span<const double> noise_std,
                          std::size_t mc_samples, const SeededRng& rng);

struct PruneStep {
  Mask mask;
  double threshold = 0.0;  // lowest kept score
  std::size_t kept = 0;    // surviving prunable weights
};

// Keeps the round(d^{t/T_p} · n_prunable) highest-scoring surviving
// prunable weights (ties keep the lower index). Throws LayerCollapse when a
// prunable layer ends up with no weights.
PruneStep prune_round(const ModelSpec& spec, const SaliencyReport& report, const Mask& mask, std::size_t t,
                      std::size_t rounds, double density);

// Surviving fraction of the prunable weights.
double prunable_density(const ModelSpec& spec, const Mask& mask);

enum class PruneMode { real_data, data_free };

struct PruningConfig {
  PruneMode mode = PruneMode::data_free;
  std::size_t rounds = 50;          // T_p
  double density = 0.2;             // d
  std::size_t devices_per_round = 10;  // G_p (real data)
  double eps_scale = 0.01;
  std::size_t mc_samples = 1;
  std::size_t probe_batch = 256;    // samples per probe batch

  void validate() const;
};

struct PruningRoundLog {
  std::size_t round = 0;
  std::vector<std::size_t> selected;  // devices (real data)
  double threshold = 0.0;
  std::size_t kept = 0;
  double up_bits = 0.0;
  double down_bits = 0.0;
  std::vector<double> uploaded;  // F_i values sent by devices, per device then draw
  double objective = 0.0;        // I as assembled by the server
};

struct PruningResult {
  Mask mask;
  std::vector<PruningRoundLog> rounds;
};

// Sees every round's log and the mask that round produced.
using PruneObserver = std::function<void(const PruningRoundLog&, const Mask&)>;

// Federated foresight pruning. Real data: every round G_p sampled devices
// evaluate F_i on a probe batch of their own data and upload the scalars;
// the server differentiates. Data free: the server probes with Gaussian
// inputs and no device is contacted.
PruningResult run_foresight_pruning(const PruningConfig& cfg, const ModelSpec& spec, const ModelParams& params,
                                    const DatasetHandle& data, std::span<const ClientPartition> devices,
                                    const SeededRng& rng, const PruneObserver& observer = {});

// |A ∩ B| / |A ∪ B| over the kept prunable coordinates.
double mask_jaccard(const ModelSpec& spec, const Mask& a, const Mask& b);

}  // namespace fedzo
