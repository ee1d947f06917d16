#include "fedzo/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "fedzo/accounting.hpp"
#include "fedzo/checkpoint.hpp"
#include "fedzo/error.hpp"
#include "fedzo/flops.hpp"

namespace fedzo {

ModelSpec lenet5(const std::vector<std::size_t>& input_shape, std::size_t classes) {
  if (input_shape.size() != 3) throw ShapeError("lenet5 needs (C, H, W) inputs");
  ModelSpec s;
  s.name = "lenet5";
  s.input_shape = input_shape;
  s.layers = {LayerSpec::conv2d(input_shape[0], 6, 5).unprunable(),
              LayerSpec::relu(),
              LayerSpec::maxpool2d(2),
              LayerSpec::conv2d(6, 16, 5),
              LayerSpec::relu(),
              LayerSpec::maxpool2d(2),
              LayerSpec::flatten()};
  const auto shapes = infer_shapes(s);
  const std::size_t flat = shapes.back()[0];
  s.layers.insert(s.layers.end(), {LayerSpec::dense(flat, 120), LayerSpec::relu(), LayerSpec::dense(120, 84),
                                   LayerSpec::relu(), LayerSpec::dense(84, classes)});
  infer_shapes(s);
  return s;
}

ModelSpec mlp(const std::vector<std::size_t>& input_shape, const std::vector<std::size_t>& hidden,
              std::size_t classes) {
  ModelSpec s;
  s.name = "mlp";
  s.input_shape = input_shape;
  if (input_shape.size() != 1) s.layers.push_back(LayerSpec::flatten());
  std::size_t in = shape_product(input_shape);
  for (std::size_t h : hidden) {
    s.layers.push_back(LayerSpec::dense(in, h));
    s.layers.push_back(LayerSpec::relu());
    in = h;
  }
  s.layers.push_back(LayerSpec::dense(in, classes));
  infer_shapes(s);
  return s;
}

ModelSpec build_model(const std::string& name, const std::vector<std::size_t>& input_shape, std::size_t classes) {
  if (name == "lenet5") return lenet5(input_shape, classes);
  if (name == "linear") {
    ModelSpec s = mlp(input_shape, {}, classes);
    s.name = "linear";
    return s;
  }
  if (name.rfind("mlp-", 0) == 0) {
    std::vector<std::size_t> hidden;
    std::size_t pos = 4;
    while (pos <= name.size()) {
      const auto dash = name.find('-', pos);
      const std::string part = name.substr(pos, dash == std::string::npos ? std::string::npos : dash - pos);
      if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
        throw ValidationError("model: bad hidden width '" + part + "' in " + name);
      }
      hidden.push_back(std::stoul(part));
      if (dash == std::string::npos) break;
      pos = dash + 1;
    }
    ModelSpec s = mlp(input_shape, hidden, classes);
    s.name = name;
    return s;
  }
  throw ValidationError("model: unknown architecture " + name);
}

DatasetSplit load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == "synthetic") return gen_synthetic(cfg.synthetic, SeededRng{cfg.seed, 0}.derive({3}));
  std::string dir = cfg.data_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("FEDZO_DATA_ROOT")) dir = env;
  }
  if (dir.empty()) throw ValidationError("cifar10 needs data_dir or FEDZO_DATA_ROOT");
  return load_cifar10(dir);
}

ExperimentSetup prepare_experiment(const ExperimentConfig& cfg, const DatasetSplit& data) {
  cfg.validate();
  const SeededRng root{cfg.seed, 0};
  ExperimentSetup s;
  s.spec = build_model(cfg.model, data.train.sample_shape(), data.train.classes);
  s.init = init_params(s.spec, root.derive({1}));
  s.partitions = dirichlet_partition(data.train.labels, data.train.classes, cfg.m, cfg.beta, root.derive({2}));
  s.pruning_rng = root.derive({4});
  s.training_rng = root.derive({5});
  return s;
}

std::vector<RoundMetrics> pruning_metrics(const ExperimentConfig& cfg, const ModelSpec& spec,
                                          const PruningResult& result) {
  std::vector<RoundMetrics> rows;
  const bool data_free = cfg.prune_mode == PruneMode::data_free;
  const auto flags = prunable_flags(spec);
  const double n_prunable = static_cast<double>(std::count(flags.begin(), flags.end(), 1));
  double density = 1.0;  // surviving prunable fraction entering the round
  double flops = 0.0;
  for (const auto& r : result.rounds) {
    RoundMetrics m;
    m.round = r.round;
    m.phase = "prune";
    m.loss = r.objective;
    m.up_bits = static_cast<std::uint64_t>(r.up_bits);
    m.down_bits = static_cast<std::uint64_t>(r.down_bits);
    if (!data_free) {
      // Each selected device runs 1 + S forwards over its probe batch.
      const double per = count_forward_flops(spec, density);
      flops += static_cast<double>(r.selected.size() * cfg.probe_batch * (1 + cfg.mc_samples)) * per;
      m.peak_mem_model_bytes = static_cast<std::uint64_t>(
          std::llround(peak_memory_model(spec, cfg.probe_batch, MemoryMode::bp_free, density)));
    }
    density = std::max(static_cast<double>(r.kept) / n_prunable, 1e-12);
    m.flops_cum = flops;
    rows.push_back(m);
  }
  return rows;
}

PruningOutcome run_pruning(const ExperimentConfig& cfg, const DatasetSplit& data) {
  const ExperimentSetup setup = prepare_experiment(cfg, data);
  PruningOutcome out;
  out.spec = setup.spec;
  out.result = run_foresight_pruning(cfg.pruning(), setup.spec, setup.init, data.train, setup.partitions,
                                     setup.pruning_rng);
  out.metrics = pruning_metrics(cfg, setup.spec, out.result);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const DatasetSplit& data, const std::optional<Mask>& mask,
                                const MetricsSink& sink) {
  const ExperimentSetup setup = prepare_experiment(cfg, data);
  ExperimentResult res;
  res.spec = setup.spec;
  auto emit = [&](const RoundMetrics& m) {
    res.metrics.push_back(m);
    if (sink) sink(m);
  };
  Mask final_mask;
  if (mask) {
    validate_mask(setup.spec, *mask);
    final_mask = *mask;
  } else {
    res.pruning = run_foresight_pruning(cfg.pruning(), setup.spec, setup.init, data.train, setup.partitions,
                                        setup.pruning_rng);
    final_mask = res.pruning.mask;
    for (const auto& m : pruning_metrics(cfg, setup.spec, res.pruning)) emit(m);
  }
  double flops = res.metrics.empty() ? 0.0 : res.metrics.back().flops_cum;

  TrainingConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.comm = cfg.comm;
  tc.opt = {cfg.lr, cfg.momentum, cfg.weight_decay, cfg.lr_decay};
  ServerState state = make_server_state(setup.spec, setup.init, final_mask, cfg.lr);
  double last_acc = 0.0;
  for (std::size_t t = 1; t <= cfg.T_t; ++t) {
    const RoundPlan plan = make_round_plan(setup.training_rng, t, cfg.m, cfg.G_t, cfg.sigma, cfg.K, cfg.difference,
                                           cfg.dropout);
    const bool eval_now = t % cfg.eval_every == 0 || t == cfg.T_t;
    const DatasetHandle* eval = eval_now ? &data.test : nullptr;
    auto [next, m] = cfg.algorithm == Algorithm::fedavg
                         ? run_fedavg_baseline(setup.spec, state, plan, setup.partitions, data.train, cfg.local_epochs,
                                               tc, eval)
                         : run_training_round(setup.spec, state, plan, setup.partitions, data.train, tc, eval);
    if (eval_now) {
      last_acc = m.accuracy;
    } else {
      m.accuracy = last_acc;
    }
    flops += m.flops_cum;
    m.flops_cum = flops;
    state = std::move(next);
    emit(m);
  }
  res.state = std::move(state);
  return res;
}

ExperimentResult run_experiment_to_files(const ExperimentConfig& cfg, const DatasetSplit& data,
                                         const std::optional<Mask>& mask, const RunFiles& files) {
  MetricsWriter writer(files.metrics);
  ExperimentResult res = run_experiment(cfg, data, mask, [&](const RoundMetrics& m) { writer.write(m); });
  writer.close();
  save_checkpoint(files.checkpoint, res.spec, res.state.params, res.state.mask);
  return res;
}

}  // namespace fedzo
