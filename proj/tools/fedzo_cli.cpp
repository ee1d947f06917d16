// fedzo: pruning, BP-free federated training, baselines, checks, reports.
//
// Exit codes: 0 success, 1 validation error (bad flags, config or a failed
// check), 2 runtime failure. Errors go to stderr as one JSON object per line.
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedzo/accounting.hpp"
#include "fedzo/checkpoint.hpp"
#include "fedzo/config.hpp"
#include "fedzo/error.hpp"
#include "fedzo/experiment.hpp"
#include "fedzo/metrics.hpp"
#include "fedzo/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::string data_dir;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.path, "experiment config file (TOML subset)");
  cmd->add_option("--set", a.overrides, "key=value override, applied after the file; repeatable");
  cmd->add_option("--data-dir", a.data_dir, "CIFAR-10 directory (else config data_dir, else $FEDZO_DATA_ROOT)");
}

fedzo::ExperimentConfig resolve(const ConfigArgs& a) {
  fedzo::ExperimentConfig cfg = a.path.empty() ? fedzo::ExperimentConfig{} : fedzo::load_config(a.path);
  for (const auto& o : a.overrides) fedzo::apply_override(cfg, o);
  if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
  cfg.validate();
  return cfg;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

void info(const json& j) { std::cout << j.dump() << '\n'; }

json summarize(const fs::path& csv) {
  const auto rows = fedzo::read_metrics_csv(csv);
  json j{{"file", csv.string()}, {"rows", rows.size()}};
  std::size_t prune = 0, train = 0;
  double best = 0.0;
  for (const auto& m : rows) {
    (m.phase == "prune" ? prune : train) += 1;
    if (m.phase != "prune") best = std::max(best, m.accuracy);
  }
  const fedzo::CostLedger ledger = fedzo::replay_ledger(rows);
  j["prune_rounds"] = prune;
  j["train_rounds"] = train;
  if (!rows.empty()) {
    j["final_loss"] = rows.back().loss;
    j["final_accuracy"] = rows.back().accuracy;
  }
  j["best_accuracy"] = best;
  j["flops"] = ledger.flops;
  j["up_bits"] = ledger.up_bits;
  j["down_bits"] = ledger.down_bits;
  j["peak_mem_model_bytes"] = ledger.peak_mem_bytes;
  return j;
}

struct RunOut {
  std::string dir = ".";
  std::string metrics;
  std::string checkpoint;

  fedzo::RunFiles files(const std::string& stem) const {
    const fs::path d(dir);
    fs::create_directories(d);
    return {metrics.empty() ? d / (stem + ".csv") : fs::path(metrics),
            checkpoint.empty() ? d / (stem + ".ckpt") : fs::path(checkpoint)};
  }
};

void add_out_flags(CLI::App* cmd, RunOut& o) {
  cmd->add_option("-o,--out-dir", o.dir, "directory for <stem>.csv and <stem>.ckpt");
  cmd->add_option("--metrics", o.metrics, "metrics CSV path (overrides --out-dir)");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path (overrides --out-dir)");
}

int run_and_report(const fedzo::ExperimentConfig& cfg, const std::optional<fedzo::Mask>& mask,
                   const fedzo::RunFiles& files, const fedzo::DatasetSplit& data) {
  const auto res = fedzo::run_experiment_to_files(cfg, data, mask, files);
  json j = summarize(files.metrics);
  j["checkpoint"] = files.checkpoint.string();
  j["density"] = res.state.mask.density();
  info(j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NTK foresight pruning and BP-free federated training"};
  app.require_subcommand(1);

  ConfigArgs prune_cfg, train_cfg, base_cfg, show_cfg;
  std::string prune_mode, prune_out = "out.mask", prune_metrics;
  auto* prune = app.add_subcommand("prune", "run the pruning phase and write a mask file");
  add_config_flags(prune, prune_cfg);
  prune->add_option("--mode", prune_mode, "data-free or real-data (overrides the config)")
      ->check(CLI::IsMember({"data-free", "real-data"}));
  prune->add_option("--out", prune_out, "mask file to write");
  prune->add_option("--metrics", prune_metrics, "also write the pruning rounds as a metrics CSV");

  RunOut train_out;
  std::string train_mask;
  auto* train = app.add_subcommand("train", "pruning (unless --mask) then BP-free training");
  add_config_flags(train, train_cfg);
  add_out_flags(train, train_out);
  train->add_option("--mask", train_mask, "mask file from `prune`; skips the pruning phase");

  RunOut base_out;
  std::string base_kind;
  auto* base = app.add_subcommand("baseline", "dense baselines: fedavg (backprop) or vanilla (BP-free, no pruning)");
  base->add_option("kind", base_kind, "fedavg or vanilla")->required()->check(CLI::IsMember({"fedavg", "vanilla"}));
  add_config_flags(base, base_cfg);
  add_out_flags(base, base_out);

  bool verify_full = false;
  std::vector<int> verify_only;
  auto* verify = app.add_subcommand("verify", "run the property and oracle checks");
  verify->add_flag("--full", verify_full, "acceptance-sized runs (slow)");
  verify->add_option("--only", verify_only, "check ids to run")->delimiter(',');

  std::vector<std::string> report_files;
  auto* report = app.add_subcommand("report", "summarize metrics CSVs");
  report->add_option("files", report_files, "metrics CSV files")->required()->check(CLI::ExistingFile);

  auto* show = app.add_subcommand("config", "print the resolved config");
  add_config_flags(show, show_cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 1;
  }

  try {
    if (*prune) {
      fedzo::ExperimentConfig cfg = resolve(prune_cfg);
      if (!prune_mode.empty()) fedzo::apply_override(cfg, "prune_mode=\"" + prune_mode + "\"");
      const fedzo::DatasetSplit data = fedzo::load_dataset(cfg);
      const fedzo::PruningOutcome out = fedzo::run_pruning(cfg, data);
      fedzo::save_mask(prune_out, out.spec, out.result.mask);
      if (!prune_metrics.empty()) {
        fedzo::MetricsWriter w(prune_metrics);
        for (const auto& m : out.metrics) w.write(m);
        w.close();
      }
      std::uint64_t up = 0;
      for (const auto& m : out.metrics) up += m.up_bits;
      info({{"mask", prune_out},
            {"rounds", out.result.rounds.size()},
            {"density", out.result.mask.density()},
            {"prunable_density", fedzo::prunable_density(out.spec, out.result.mask)},
            {"up_bits", up}});
      return 0;
    }
    if (*train) {
      const fedzo::ExperimentConfig cfg = resolve(train_cfg);
      const fedzo::DatasetSplit data = fedzo::load_dataset(cfg);
      std::optional<fedzo::Mask> mask;
      if (!train_mask.empty()) mask = fedzo::load_mask(train_mask, fedzo::prepare_experiment(cfg, data).spec);
      return run_and_report(cfg, mask, train_out.files("train"), data);
    }
    if (*base) {
      fedzo::ExperimentConfig cfg = resolve(base_cfg);
      cfg.d = 1.0;
      cfg.algorithm = base_kind == "fedavg" ? fedzo::Algorithm::fedavg : fedzo::Algorithm::bp_free;
      const fedzo::DatasetSplit data = fedzo::load_dataset(cfg);
      return run_and_report(cfg, std::nullopt, base_out.files(base_kind), data);
    }
    if (*verify) {
      int failed = 0;
      fedzo::run_checks(verify_full ? fedzo::CheckDepth::full : fedzo::CheckDepth::quick, verify_only,
                        [&](const fedzo::CheckResult& r) {
                          std::cout << fedzo::format_check(r) << std::endl;
                          failed += !r.pass;
                        });
      return failed == 0 ? 0 : 1;
    }
    if (*report) {
      json all = json::array();
      for (const auto& f : report_files) all.push_back(summarize(f));
      std::cout << all.dump(2) << '\n';
      return 0;
    }
    if (*show) {
      std::cout << fedzo::serialize_config(resolve(show_cfg));
      return 0;
    }
  } catch (const fedzo::ValidationError& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const fedzo::Error& e) {
    print_error(e.kind(), e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 2;
  }
  return 0;
}
