#include "fedzo/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "fedzo/error.hpp"
#include "fedzo/flops.hpp"
#include "fedzo/kernels.hpp"
#include "fedzo/loss.hpp"

namespace fedzo {

ServerState make_server_state(const ModelSpec& spec, ModelParams params, Mask mask, double lr) {
  validate_mask(spec, mask);
  if (params.size() != mask.size()) throw ShapeError("parameters and mask differ in length");
  ServerState s;
  s.params = ModelParams(spec, effective_weights(params, mask));
  s.mask = std::move(mask);
  s.momentum.assign(s.params.size(), 0.0);
  s.lr = lr;
  return s;
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ValidationError("lr decay factor must lie in (0, 1]");
}

RoundPlan make_round_plan(const SeededRng& rng, std::size_t round, std::size_t devices, std::size_t per_round,
                          double sigma, std::size_t k, Difference difference, double dropout) {
  if (devices == 0) throw ValidationError("no devices to sample");
  if (per_round == 0 || per_round > devices) {
    throw ValidationError("devices per round must lie in [1, " + std::to_string(devices) + "]");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout probability must lie in [0, 1)");
  const SeededRng rr = rng.derive({round});
  RoundPlan plan;
  plan.round = round;
  plan.selected = sample_without_replacement(devices, per_round, rr.derive({0}));
  RandomStream drop(rr.derive({1}));
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t dev : plan.selected) {
    std::uint64_t seed = mix64(mix64(rng.seed ^ mix64(rr.stream_id)) ^ mix64(dev));
    while (!seen.insert(seed).second) seed = mix64(seed);
    PerturbationSpec p;
    p.rng = SeededRng{seed, 0};
    p.sigma = sigma;
    p.k = k;
    p.difference = difference;
    p.validate();
    plan.pspecs.push_back(p);
    plan.dropped.push_back(dropout > 0.0 && drop.uniform() < dropout ? 1 : 0);
  }
  return plan;
}

namespace {

std::vector<std::size_t> local_batch(const ClientPartition& part, std::size_t batch, const SeededRng& rng) {
  const std::size_t take = std::min(batch, part.size());
  std::vector<std::size_t> rows;
  for (std::size_t r : sample_without_replacement(part.size(), take, rng)) rows.push_back(part.indices[r]);
  return rows;
}

void check_plan(const RoundPlan& plan, std::span<const ClientPartition> partitions) {
  if (plan.pspecs.size() != plan.selected.size() || plan.dropped.size() != plan.selected.size()) {
    throw ValidationError("round plan is inconsistent");
  }
  for (std::size_t d : plan.selected) {
    if (d >= partitions.size()) throw ValidationError("plan selects unknown device " + std::to_string(d));
  }
}

}  // namespace

DeviceUpload device_round(const ModelSpec& spec, const ServerState& state, const ClientPartition& part,
                          const DatasetHandle& data, const PerturbationSpec& pspec, std::size_t round,
                          const TrainingConfig& cfg) {
  pspec.validate();
  if (cfg.batch_size == 0) throw ValidationError("batch size must be >= 1");
  const auto rows = local_batch(part, cfg.batch_size, pspec.rng.derive({~std::uint64_t{0}, round}));
  const Tensor x = gather_rows(data.inputs, rows);
  const std::vector<int> y = gather_labels(data.labels, rows);

  DeviceUpload up;
  up.device = part.device_id;
  up.samples = part.size();
  up.seed = pspec.rng.seed;
  up.batch = rows.size();
  const auto eff = effective_weights(state.params, state.mask);
  const auto loss = [&](std::span<const double> w) { return cross_entropy_loss(forward_effective(spec, w, x), y); };
  up.base_loss = loss(eff);

  if (cfg.comm == CommMode::seed_trick) {
    up.dlv = delta_losses(loss, eff, pspec, state.mask.bits());
    return up;
  }
  // Full-vector upload: the device keeps every δ_k it drew and forms the
  // estimate itself.
  const std::size_t n = eff.size();
  const bool central = pspec.difference == Difference::central;
  const auto& kern = kernels::active();
  const double inv_var = 1.0 / (pspec.sigma * pspec.sigma);
  std::vector<std::vector<double>> held(pspec.k);
  up.dlv.values.resize(pspec.k);
  std::vector<double> probe(n);
  for (std::size_t k = 0; k < pspec.k; ++k) {
    held[k] = perturbation(pspec, k, n, state.mask.bits());
    for (std::size_t j = 0; j < n; ++j) probe[j] = eff[j] + held[k][j];
    double v = loss(probe);
    if (central) {
      for (std::size_t j = 0; j < n; ++j) probe[j] = eff[j] - held[k][j];
      v = (v - loss(probe)) / 2.0;
    } else {
      v -= up.base_loss;
    }
    if (!std::isfinite(v)) throw NumericError("non-finite loss at perturbation sample " + std::to_string(k));
    up.dlv.values[k] = v;
  }
  up.estimate.assign(n, 0.0);
  for (std::size_t k = 0; k < pspec.k; ++k) kern.axpy(up.dlv.values[k] * inv_var, held[k].data(), up.estimate.data(), n);
  const double kk = static_cast<double>(pspec.k);
  for (double& v : up.estimate) v /= kk;
  return up;
}

std::vector<double> aggregate_estimates(std::span<const DeviceUpload> uploads, std::span<const PerturbationSpec> pspecs,
                                        const Mask& mask, CommMode mode) {
  if (uploads.size() != pspecs.size()) throw ValidationError("one perturbation spec per upload required");
  const std::size_t n = mask.size();
  std::vector<double> agg(n, 0.0);
  double total = 0.0;
  for (const auto& u : uploads) total += static_cast<double>(u.samples);
  if (uploads.empty() || total == 0.0) return agg;
  const auto& kern = kernels::active();
  for (std::size_t i = 0; i < uploads.size(); ++i) {
    if (pspecs[i].rng.seed != uploads[i].seed) throw ValidationError("upload seed does not match the plan");
    const double w = static_cast<double>(uploads[i].samples) / total;
    if (mode == CommMode::seed_trick) {
      const auto g = stein_estimate(uploads[i].dlv, pspecs[i], n, mask.bits());
      kern.axpy(w, g.data(), agg.data(), n);
    } else {
      if (uploads[i].estimate.size() != n) throw ShapeError("full-vector upload has the wrong length");
      kern.axpy(w, uploads[i].estimate.data(), agg.data(), n);
    }
  }
  return agg;
}

void apply_server_update(ServerState& state, std::span<const double> grad, const OptimizerConfig& opt) {
  const std::size_t n = state.params.size();
  if (grad.size() != n) throw ShapeError("gradient length does not match the model");
  auto w = state.params.flat();
  for (std::size_t j = 0; j < n; ++j) {
    if (!state.mask.test(j)) {
      state.momentum[j] = 0.0;
      continue;
    }
    state.momentum[j] = opt.momentum * state.momentum[j] + (grad[j] + opt.weight_decay * w[j]);
    w[j] -= state.lr * state.momentum[j];
  }
  if (!std::all_of(w.begin(), w.end(), [](double v) { return std::isfinite(v); })) {
    throw NumericError("server update produced non-finite parameters");
  }
  state.lr *= opt.decay;
}

Evaluation evaluate(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const DatasetHandle& data,
                    std::size_t chunk) {
  if (data.size() == 0) throw ValidationError("cannot evaluate on an empty dataset");
  const auto eff = effective_weights(params, mask);
  Evaluation ev;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t e = std::min(data.size(), b + chunk);
    std::vector<std::size_t> rows(e - b);
    for (std::size_t i = b; i < e; ++i) rows[i - b] = i;
    const Tensor logits = forward_effective(spec, eff, gather_rows(data.inputs, rows));
    const auto y = gather_labels(data.labels, rows);
    const double frac = static_cast<double>(e - b);
    ev.loss += cross_entropy_loss(logits, y) * frac;
    ev.accuracy += accuracy(logits, y) * frac;
  }
  ev.loss /= static_cast<double>(data.size());
  ev.accuracy /= static_cast<double>(data.size());
  return ev;
}

namespace {

std::uint64_t mem_bytes(const ModelSpec& spec, std::size_t batch, MemoryMode mode, const Mask& mask) {
  return static_cast<std::uint64_t>(std::llround(peak_memory_model(spec, batch, mode, std::max(mask.density(), 1e-12))));
}

}  // namespace

std::pair<ServerState, RoundMetrics> run_training_round(const ModelSpec& spec, const ServerState& state,
                                                        const RoundPlan& plan,
                                                        std::span<const ClientPartition> partitions,
                                                        const DatasetHandle& data, const TrainingConfig& cfg,
                                                        const DatasetHandle* eval) {
  check_plan(plan, partitions);
  cfg.opt.validate();
  std::vector<DeviceUpload> uploads;
  std::vector<PerturbationSpec> pspecs;
  for (std::size_t i = 0; i < plan.selected.size(); ++i) {
    if (plan.dropped[i]) continue;
    uploads.push_back(device_round(spec, state, partitions[plan.selected[i]], data, plan.pspecs[i], plan.round, cfg));
    pspecs.push_back(plan.pspecs[i]);
  }
  ServerState next = state;
  const auto grad = aggregate_estimates(uploads, pspecs, state.mask, cfg.comm);
  if (!uploads.empty()) {
    apply_server_update(next, grad, cfg.opt);
  } else {
    next.lr *= cfg.opt.decay;
  }
  next.round = state.round + 1;

  RoundMetrics m;
  m.round = plan.round;
  m.phase = "train";
  double total = 0.0, loss = 0.0, flops = 0.0;
  const double per_forward = count_forward_flops(spec, state.mask);
  for (const auto& u : uploads) {
    total += static_cast<double>(u.samples);
    loss += static_cast<double>(u.samples) * u.base_loss;
    const std::size_t k = u.dlv.values.size();
    const double forwards = plan.pspecs.empty() || plan.pspecs[0].difference == Difference::one_sided
                                ? static_cast<double>(k + 1)
                                : static_cast<double>(2 * k + 1);
    flops += static_cast<double>(u.batch) * forwards * per_forward;
  }
  m.loss = total > 0.0 ? loss / total : 0.0;
  m.flops_cum = flops;
  if (!uploads.empty()) {
    const Bits b = comm_training_round_kept(state.mask.size(), state.mask.count(), pspecs[0].k, cfg.comm,
                                            uploads.size());
    m.up_bits = b.up;
    m.down_bits = b.down;
  }
  m.peak_mem_model_bytes = mem_bytes(spec, cfg.batch_size, MemoryMode::bp_free, state.mask);
  if (eval != nullptr) m.accuracy = evaluate(spec, next.params, next.mask, *eval).accuracy;
  return {std::move(next), m};
}

std::pair<ServerState, RoundMetrics> run_fedavg_baseline(const ModelSpec& spec, const ServerState& state,
                                                         const RoundPlan& plan,
                                                         std::span<const ClientPartition> partitions,
                                                         const DatasetHandle& data, std::size_t epochs,
                                                         const TrainingConfig& cfg, const DatasetHandle* eval) {
  check_plan(plan, partitions);
  cfg.opt.validate();
  if (cfg.batch_size == 0) throw ValidationError("batch size must be >= 1");
  RoundMetrics m;
  m.round = plan.round;
  m.phase = "fedavg";
  ServerState next = state;
  next.round = state.round + 1;
  if (epochs == 0) return {std::move(next), m};

  const std::size_t n = state.params.size();
  const auto& kern = kernels::active();
  const double per_forward = count_forward_flops(spec, state.mask);
  std::vector<double> agg(n, 0.0);
  double total = 0.0, loss_sum = 0.0, flops = 0.0;
  std::size_t survivors = 0;
  for (std::size_t i = 0; i < plan.selected.size(); ++i) {
    if (!plan.dropped[i]) total += static_cast<double>(partitions[plan.selected[i]].size());
  }
  for (std::size_t i = 0; i < plan.selected.size(); ++i) {
    if (plan.dropped[i]) continue;
    ++survivors;
    const ClientPartition& part = partitions[plan.selected[i]];
    ModelParams local = state.params;
    std::vector<double> vel(n, 0.0);
    auto w = local.flat();
    double first_loss = 0.0;
    bool have_loss = false;
    for (std::size_t ep = 0; ep < epochs; ++ep) {
      std::vector<std::size_t> order = part.indices;
      RandomStream rs(plan.pspecs[i].rng.derive({~std::uint64_t{0}, plan.round, ep}));
      for (std::size_t a = order.size(); a > 1; --a) std::swap(order[a - 1], order[rs.below(a)]);
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t e = std::min(order.size(), b + cfg.batch_size);
        const std::span<const std::size_t> rows(order.data() + b, e - b);
        const Tensor x = gather_rows(data.inputs, rows);
        const auto y = gather_labels(data.labels, rows);
        const auto fwd = model_forward_traced(spec, local, state.mask, x);
        if (!have_loss) {
          first_loss = cross_entropy_loss(fwd.logits, y);
          have_loss = true;
        }
        const auto g = backward_params(spec, local, state.mask, fwd.trace, cross_entropy_grad(fwd.logits, y));
        for (std::size_t j = 0; j < n; ++j) {
          if (!state.mask.test(j)) continue;
          vel[j] = cfg.opt.momentum * vel[j] + (g[j] + cfg.opt.weight_decay * w[j]);
          w[j] -= state.lr * vel[j];
        }
        flops += 3.0 * static_cast<double>(e - b) * per_forward;
      }
    }
    const double wt = static_cast<double>(part.size()) / total;
    kern.axpy(wt, w.data(), agg.data(), n);
    loss_sum += wt * first_loss;
  }
  if (survivors > 0) next.params = ModelParams(spec, std::move(agg));
  next.lr *= cfg.opt.decay;
  m.loss = loss_sum;
  m.flops_cum = flops;
  if (survivors > 0) {
    const Bits b = comm_training_round_kept(n, state.mask.count(), 1, CommMode::full_vector, survivors);
    m.up_bits = b.up;
    m.down_bits = b.down;
  }
  m.peak_mem_model_bytes = mem_bytes(spec, cfg.batch_size, MemoryMode::backprop, state.mask);
  if (eval != nullptr) m.accuracy = evaluate(spec, next.params, next.mask, *eval).accuracy;
  return {std::move(next), m};
}

}  // namespace fedzo
