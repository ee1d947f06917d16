#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "fedzo/accounting.hpp"
#include "fedzo/dataset.hpp"
#include "fedzo/prune.hpp"
#include "fedzo/zo.hpp"

namespace fedzo {

enum class Algorithm { bp_free, fedavg };

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string model = "mlp-128-128";  // "lenet5", "linear" or "mlp-<h1>-<h2>..."
  std::string dataset = "synthetic";  // or "cifar10"
  std::string data_dir;               // cifar10; falls back to $FEDZO_DATA_ROOT
  SyntheticSpec synthetic;

  std::size_t m = 20;      // devices
  double beta = 0.1;       // Dirichlet concentration
  double dropout = 0.0;    // per-round device failure probability

  PruneMode prune_mode = PruneMode::data_free;
  std::size_t T_p = 50;
  double d = 0.2;
  std::size_t G_p = 10;
  double eps = 0.01;       // ΔW std as a fraction of the layer's init std
  std::size_t mc_samples = 1;
  std::size_t probe_batch = 256;

  Algorithm algorithm = Algorithm::bp_free;
  std::size_t T_t = 400;
  std::size_t G_t = 4;
  std::size_t K = 50;
  double sigma = 1e-3;
  Difference difference = Difference::one_sided;
  CommMode comm = CommMode::seed_trick;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 1;  // fedavg only
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double lr_decay = 0.998;
  std::size_t eval_every = 1;

  // Throws ValidationError naming the first offending field.
  void validate() const;
  PruningConfig pruning() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Scalar value of the config text format.
using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;

// Subset of TOML: `key = value` lines, `[table]` headers, `#` comments,
// basic double-quoted strings, integers, floats and booleans. Keys come
// back as "table.key".
std::map<std::string, ConfigValue> parse_config_text(const std::string& text, const std::string& source = "config");
ConfigValue parse_config_value(const std::string& text, const std::string& where);

// Applies one key; unknown keys and ill-typed values throw ValidationError.
void set_config_key(ExperimentConfig& cfg, const std::string& key, const ConfigValue& value);

ExperimentConfig config_from_text(const std::string& text, const std::string& source = "config");
ExperimentConfig load_config(const std::filesystem::path& path);
// "key=value" as given to --set.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace fedzo
