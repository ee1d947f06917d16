#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "fedzo/config.hpp"
#include "fedzo/dataset.hpp"
#include "fedzo/fedsim.hpp"
#include "fedzo/metrics.hpp"
#include "fedzo/model.hpp"
#include "fedzo/partition.hpp"
#include "fedzo/prune.hpp"

namespace fedzo {

// LeNet-5 for (C, H, W) inputs: conv(C→6, 5) relu pool2 conv(6→16, 5) relu
// pool2 flatten dense→120 relu →84 relu →classes. The first conv is kept
// dense.
ModelSpec lenet5(const std::vector<std::size_t>& input_shape, std::size_t classes);
// Dense ReLU network; a leading flatten is added for image inputs.
ModelSpec mlp(const std::vector<std::size_t>& input_shape, const std::vector<std::size_t>& hidden,
              std::size_t classes);
// "lenet5", "linear" or "mlp-<h1>-<h2>...".
ModelSpec build_model(const std::string& name, const std::vector<std::size_t>& input_shape, std::size_t classes);

// Synthetic data from the config seed, or CIFAR-10 from data_dir (falling
// back to $FEDZO_DATA_ROOT).
DatasetSplit load_dataset(const ExperimentConfig& cfg);

// Everything derived from the config before any round runs. Streams:
// init 1, partition 2, data 3, pruning 4, training 5 under the config seed,
// so training never depends on how the mask was obtained.
struct ExperimentSetup {
  ModelSpec spec;
  ModelParams init;
  std::vector<ClientPartition> partitions;
  SeededRng pruning_rng;
  SeededRng training_rng;
};
ExperimentSetup prepare_experiment(const ExperimentConfig& cfg, const DatasetSplit& data);

// Metric rows of a pruning phase (phase "prune").
std::vector<RoundMetrics> pruning_metrics(const ExperimentConfig& cfg, const ModelSpec& spec,
                                          const PruningResult& result);

struct PruningOutcome {
  ModelSpec spec;
  PruningResult result;
  std::vector<RoundMetrics> metrics;
};
// The pruning phase alone, with the same streams run_experiment uses.
PruningOutcome run_pruning(const ExperimentConfig& cfg, const DatasetSplit& data);

struct ExperimentResult {
  ModelSpec spec;
  PruningResult pruning;
  ServerState state;
  std::vector<RoundMetrics> metrics;
};

using MetricsSink = std::function<void(const RoundMetrics&)>;

// Pruning phase (skipped when `mask` is given) followed by T_t training
// rounds. Every row is also passed to `sink` as soon as it exists.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const DatasetSplit& data,
                                const std::optional<Mask>& mask = std::nullopt, const MetricsSink& sink = {});

struct RunFiles {
  std::filesystem::path metrics;     // CSV, streamed row by row
  std::filesystem::path checkpoint;  // written once at the end
};

// run_experiment with its metrics and final state written to disk.
ExperimentResult run_experiment_to_files(const ExperimentConfig& cfg, const DatasetSplit& data,
                                         const std::optional<Mask>& mask, const RunFiles& files);

}  // namespace fedzo
