#include "fedzo/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedzo/error.hpp"
#include "fedzo/kernels.hpp"
#include "fedzo/parallel.hpp"

namespace fedzo {

ProbeBatch synthetic_probe(const ModelSpec& spec, std::size_t count, const SeededRng& rng) {
  if (count == 0) throw ValidationError("probe batch must hold at least one sample");
  std::vector<std::size_t> shape{count};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  ProbeBatch p;
  p.inputs = Tensor(shape);
  gaussian_fill(rng, 0, p.inputs.data());
  p.origin = ProbeBatch::Origin::synthetic_gaussian;
  return p;
}

std::vector<double> perturbation_std(const ModelSpec& spec, double eps_scale) {
  if (!(eps_scale > 0.0)) throw ValidationError("eps scale must be > 0");
  const auto segs = param_layout(spec);
  std::vector<double> sd(param_count(spec), 0.0);
  for (std::size_t i = 0; i < segs.size(); i += 2) {
    const ParamSegment& w = segs[i];
    const double fan_in = static_cast<double>(w.length / w.shape[0]);
    const double v = eps_scale * std::sqrt(2.0 / fan_in);
    std::fill_n(sd.begin() + static_cast<std::ptrdiff_t>(w.offset), w.length, v);
  }
  return sd;
}

namespace {

// ΔW ⊙ m
std::vector<double> masked_noise(std::span<const double> noise_std, const Mask& mask, const SeededRng& rng) {
  if (noise_std.size() != mask.size()) throw ShapeError("noise std length does not match the mask");
  std::vector<double> eta(mask.size());
  gaussian_fill(rng, 0, eta);
  for (std::size_t j = 0; j < eta.size(); ++j) eta[j] = mask.test(j) ? noise_std[j] * eta[j] : 0.0;
  return eta;
}

double squared_gap(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  if (!std::isfinite(s)) throw NumericError("non-finite probe output gap");
  return s;
}

std::vector<double> plus(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] + b[j];
  return out;
}

void check_probes(std::span<const ProbeBatch> probes, std::size_t mc_samples) {
  if (probes.empty()) throw ValidationError("saliency needs at least one probe batch");
  if (mc_samples < 1) throw ValidationError("mc_samples must be >= 1");
}

}  // namespace

double fd_squared_norm(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const ProbeBatch& probe,
                       std::span<const double> noise_std, const SeededRng& rng) {
  const auto eff = effective_weights(params, mask);
  const auto eta = masked_noise(noise_std, mask, rng);
  return squared_gap(forward_effective(spec, eff, probe.inputs), forward_effective(spec, plus(eff, eta), probe.inputs));
}

double fd_squared_norm(const ModelSpec& spec, const ModelParams& params, const Mask& mask, const ProbeBatch& probe,
                       double eps, const SeededRng& rng) {
  if (!(eps >= 0.0)) throw ValidationError("eps must be >= 0");
  if (eps == 0.0) return 0.0;
  std::vector<double> sd(params.size(), 0.0);
  for (const auto& seg : params.segments()) {
    if (seg.role == ParamRole::weight) std::fill_n(sd.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.length, std::sqrt(eps));
  }
  return fd_squared_norm(spec, params, mask, probe, sd, rng);
}

double saliency_objective(const ModelSpec& spec, std::span<const double> effective, const Mask& mask,
                          std::span<const ProbeBatch> probes, std::span<const double> noise_std,
                          std::size_t mc_samples, const SeededRng& rng) {
  check_probes(probes, mc_samples);
  double total = 0.0;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const auto pert = plus(effective, masked_noise(noise_std, mask, rng.derive({s})));
    for (const ProbeBatch& p : probes) {
      total += squared_gap(forward_effective(spec, effective, p.inputs), forward_effective(spec, pert, p.inputs));
    }
  }
  return total / static_cast<double>(probes.size() * mc_samples);
}

SaliencyReport saliency_scores(const ModelSpec& spec, const ModelParams& params, const Mask& mask,
                               std::span<const ProbeBatch> probes, std::span<const double> noise_std,
                               std::size_t mc_samples, const SeededRng& rng) {
  check_probes(probes, mc_samples);
  const auto eff = effective_weights(params, mask);
  const std::size_t n = eff.size();
  std::vector<std::vector<double>> etas;
  for (std::size_t s = 0; s < mc_samples; ++s) etas.push_back(masked_noise(noise_std, mask, rng.derive({s})));
  const double scale = 2.0 / static_cast<double>(probes.size() * mc_samples);

  // dF/de = 2 J(e)^T r - 2 J(e + η)^T r with r = f(e) - f(e + η).
  std::vector<std::vector<double>> partial(probes.size());
  parallel_for(probes.size(), [&](std::size_t i) {
    const auto base = forward_effective_traced(spec, eff, probes[i].inputs);
    std::vector<double> g(n, 0.0);
    for (std::size_t s = 0; s < mc_samples; ++s) {
      const auto pert_w = plus(eff, etas[s]);
      const auto pert = forward_effective_traced(spec, pert_w, probes[i].inputs);
      Tensor up = base.logits;
      for (std::size_t q = 0; q < up.size(); ++q) up[q] = scale * (base.logits[q] - pert.logits[q]);
      const auto g_base = backward_effective(spec, eff, base.trace, up);
      for (double& v : up.data()) v = -v;
      const auto g_pert = backward_effective(spec, pert_w, pert.trace, up);
      for (std::size_t j = 0; j < n; ++j) g[j] += g_base[j] + g_pert[j];
    }
    partial[i] = std::move(g);
  });
  std::vector<double> grad(n, 0.0);
  for (const auto& g : partial) {
    for (std::size_t j = 0; j < n; ++j) grad[j] += g[j];
  }
  SaliencyReport rep;
  rep.scores.resize(n);
  const auto w = params.flat();
  for (std::size_t j = 0; j < n; ++j) rep.scores[j] = mask.test(j) ? std::fabs(grad[j] * w[j]) : 0.0;
  return rep;
}

double prunable_density(const ModelSpec& spec, const Mask& mask) {
  const auto flags = prunable_flags(spec);
  if (flags.size() != mask.size()) throw ShapeError("mask length does not match the model");
  std::size_t total = 0, kept = 0;
  for (std::size_t j = 0; j < flags.size(); ++j) {
    total += flags[j];
    kept += flags[j] && mask.test(j);
  }
  return total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
}

PruneStep prune_round(const ModelSpec& spec, const SaliencyReport& report, const Mask& mask, std::size_t t,
                      std::size_t rounds, double density) {
  if (!(density > 0.0 && density <= 1.0)) throw ValidationError("target density must lie in (0, 1]");
  if (rounds == 0 || t > rounds) {
    throw ValidationError("pruning round " + std::to_string(t) + " outside [0, " + std::to_string(rounds) + "]");
  }
  validate_mask(spec, mask);
  if (report.scores.size() != mask.size()) throw ShapeError("score vector length does not match the mask");
  const auto flags = prunable_flags(spec);
  std::vector<std::size_t> alive;
  std::size_t n_prunable = 0;
  for (std::size_t j = 0; j < flags.size(); ++j) {
    n_prunable += flags[j];
    if (flags[j] && mask.test(j)) alive.push_back(j);
  }
  const double frac = std::pow(density, static_cast<double>(t) / static_cast<double>(rounds));
  const auto target = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n_prunable)));
  const std::size_t keep = std::min(target, alive.size());

  const auto& sc = report.scores;
  std::stable_sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) { return sc[a] > sc[b]; });
  std::vector<std::uint8_t> bits(mask.bits().begin(), mask.bits().end());
  for (std::size_t r = keep; r < alive.size(); ++r) bits[alive[r]] = 0;

  PruneStep step;
  step.threshold = keep == 0 ? 0.0 : sc[alive[keep - 1]];
  step.kept = keep;
  step.mask = Mask(std::move(bits));
  for (const ParamSegment& s : param_layout(spec)) {
    if (!s.prunable) continue;
    std::size_t live = 0;
    for (std::size_t j = s.offset; j < s.offset + s.length; ++j) live += step.mask.test(j);
    if (live == 0) {
      throw LayerCollapse(s.layer, "pruning round " + std::to_string(t) + " removes every weight of layer " +
                                       std::to_string(s.layer));
    }
  }
  return step;
}

void PruningConfig::validate() const {
  if (!(density > 0.0 && density <= 1.0)) throw ValidationError("pruning density must lie in (0, 1]");
  if (mode == PruneMode::real_data && devices_per_round == 0) {
    throw ValidationError("real-data pruning needs G_p >= 1");
  }
  if (!(eps_scale > 0.0)) throw ValidationError("eps scale must be > 0");
  if (mc_samples == 0) throw ValidationError("mc_samples must be >= 1");
  if (probe_batch == 0) throw ValidationError("probe batch must be >= 1");
}

PruningResult run_foresight_pruning(const PruningConfig& cfg, const ModelSpec& spec, const ModelParams& params,
                                    const DatasetHandle& data, std::span<const ClientPartition> devices,
                                    const SeededRng& rng, const PruneObserver& observer) {
  cfg.validate();
  PruningResult res;
  res.mask = full_mask(spec);
  if (cfg.density == 1.0 || cfg.rounds == 0) return res;
  if (cfg.mode == PruneMode::real_data && devices.empty()) throw ValidationError("real-data pruning needs devices");

  const auto noise_std = perturbation_std(spec, cfg.eps_scale);
  const double n = static_cast<double>(params.size());
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const SeededRng rt = rng.derive({t});
    const SeededRng draws = rt.derive({4});
    PruningRoundLog log;
    log.round = t;
    std::vector<ProbeBatch> probes;
    if (cfg.mode == PruneMode::data_free) {
      probes.push_back(synthetic_probe(spec, cfg.probe_batch, rt.derive({1})));
    } else {
      const std::size_t g = std::min(cfg.devices_per_round, devices.size());
      for (std::size_t pick : sample_without_replacement(devices.size(), g, rt.derive({2}))) {
        const ClientPartition& dev = devices[pick];
        const std::size_t take = std::min(cfg.probe_batch, dev.size());
        std::vector<std::size_t> rows;
        for (std::size_t r : sample_without_replacement(dev.size(), take, rt.derive({3, dev.device_id}))) {
          rows.push_back(dev.indices[r]);
        }
        ProbeBatch p;
        p.inputs = gather_rows(data.inputs, rows);
        p.origin = ProbeBatch::Origin::real_device;
        p.device = dev.device_id;
        probes.push_back(std::move(p));
        log.selected.push_back(dev.device_id);
      }
      // Device side: forward passes only, one scalar per draw goes up.
      for (const ProbeBatch& p : probes) {
        for (std::size_t s = 0; s < cfg.mc_samples; ++s) {
          log.uploaded.push_back(fd_squared_norm(spec, params, res.mask, p, noise_std, draws.derive({s})));
        }
      }
      log.up_bits = 32.0 * static_cast<double>(cfg.mc_samples * probes.size());
      log.down_bits = 32.0 * n * static_cast<double>(probes.size());
    }
    SaliencyReport rep = saliency_scores(spec, params, res.mask, probes, noise_std, cfg.mc_samples, draws);
    rep.round = t;
    if (cfg.mode == PruneMode::real_data) {
      log.objective = std::accumulate(log.uploaded.begin(), log.uploaded.end(), 0.0) /
                      static_cast<double>(log.uploaded.size());
    } else {
      log.objective = saliency_objective(spec, effective_weights(params, res.mask), res.mask, probes, noise_std,
                                         cfg.mc_samples, draws);
    }
    PruneStep step = prune_round(spec, rep, res.mask, t, cfg.rounds, cfg.density);
    log.threshold = step.threshold;
    log.kept = step.kept;
    res.mask = std::move(step.mask);
    if (observer) observer(log, res.mask);
    res.rounds.push_back(std::move(log));
  }
  return res;
}

double mask_jaccard(const ModelSpec& spec, const Mask& a, const Mask& b) {
  const auto flags = prunable_flags(spec);
  if (a.size() != flags.size() || b.size() != flags.size()) throw ShapeError("mask length does not match the model");
  std::size_t inter = 0, uni = 0;
  for (std::size_t j = 0; j < flags.size(); ++j) {
    if (!flags[j]) continue;
    inter += a.test(j) && b.test(j);
    uni += a.test(j) || b.test(j);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace fedzo
