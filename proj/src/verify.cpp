#include "fedzo/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>
#include <unistd.h>

#include <Eigen/Dense>

#include "fedzo/accounting.hpp"
#include "fedzo/checkpoint.hpp"
#include "fedzo/config.hpp"
#include "fedzo/error.hpp"
#include "fedzo/experiment.hpp"
#include "fedzo/flops.hpp"
#include "fedzo/loss.hpp"
#include "fedzo/metrics.hpp"
#include "fedzo/model.hpp"
#include "fedzo/ntk.hpp"
#include "fedzo/partition.hpp"
#include "fedzo/prune.hpp"
#include "fedzo/zo.hpp"

namespace fedzo {

namespace {

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string join(const std::vector<double>& v, int digits = 3) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i], digits);
  return s;
}

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("fedzo-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

ExperimentConfig small_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.model = "mlp-32";
  c.synthetic.per_class = 40;
  c.synthetic.test_per_class = 10;
  c.m = 8;
  c.G_t = 3;
  c.K = 16;
  c.T_p = 5;
  c.d = 0.5;
  c.probe_batch = 32;
  c.batch_size = 16;
  return c;
}

void randomize_biases(ModelParams& p, const SeededRng& rng) {
  for (std::size_t s = 0; s < p.segments().size(); ++s) {
    if (p.segments()[s].role != ParamRole::bias) continue;
    auto seg = p.segment(s);
    gaussian_fill(rng.derive({s}), 0, seg);
    for (double& v : seg) v *= 0.1;
  }
}

Tensor gaussian_inputs(const ModelSpec& spec, std::size_t count, const SeededRng& rng, double shift = 0.0) {
  std::vector<std::size_t> shape{count};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  Tensor t(shape);
  gaussian_fill(rng, 0, t.data());
  for (double& v : t.data()) v += shift;
  return t;
}

// ---- 1 ----------------------------------------------------------------------

CheckResult check_seed_trick(CheckDepth depth) {
  CheckResult r;
  std::string detail;
  bool pass = true;
  for (Difference diff : {Difference::one_sided, Difference::central}) {
    ExperimentConfig c = small_config(11);
    c.T_t = depth == CheckDepth::full ? 20 : 5;
    c.difference = diff;
    const DatasetSplit data = load_dataset(c);
    c.comm = CommMode::seed_trick;
    const ExperimentResult seeds = run_experiment(c, data);
    c.comm = CommMode::full_vector;
    const ExperimentResult oracle = run_experiment(c, data);
    const bool eq = same_bits(seeds.state.params.flat(), oracle.state.params.flat()) &&
                    same_bits(seeds.state.momentum, oracle.state.momentum) && seeds.state.mask == oracle.state.mask &&
                    std::memcmp(&seeds.state.lr, &oracle.state.lr, sizeof(double)) == 0;
    std::size_t differing = 0;
    const auto a = seeds.state.params.flat();
    const auto b = oracle.state.params.flat();
    for (std::size_t j = 0; j < std::min(a.size(), b.size()); ++j) {
      differing += std::memcmp(&a[j], &b[j], sizeof(double)) != 0;
    }
    const std::uint64_t up_seed = seeds.metrics.back().up_bits;
    const std::uint64_t up_full = oracle.metrics.back().up_bits;
    pass = pass && eq;
    detail += std::string(diff == Difference::central ? "; central" : "one-sided") + ": " + std::to_string(c.T_t) +
              " rounds, n=" + std::to_string(a.size()) + ", " + std::to_string(differing) +
              " differing params, upload/round " + std::to_string(up_seed) + " vs " + std::to_string(up_full) +
              " bits";
  }
  r.pass = pass;
  r.detail = detail;
  return r;
}

// ---- 2 ----------------------------------------------------------------------

ModelSpec random_net(RandomStream& rs) {
  for (;;) {
    ModelSpec s;
    std::size_t classes = 2 + rs.below(3);
    if (rs.below(2) == 0) {
      const std::size_t in = 2 + rs.below(5);
      s.name = "rand-mlp";
      s.input_shape = {in};
      std::size_t prev = in;
      const std::size_t hidden = 1 + rs.below(2);
      for (std::size_t h = 0; h < hidden; ++h) {
        const std::size_t w = 2 + rs.below(7);
        s.layers.push_back(LayerSpec::dense(prev, w));
        s.layers.push_back(LayerSpec::relu());
        prev = w;
      }
      s.layers.push_back(LayerSpec::dense(prev, classes));
    } else {
      const std::size_t c = 1 + rs.below(2);
      const std::size_t hw = 4 + rs.below(3);
      const std::size_t k = 2 + rs.below(2);
      const std::size_t pad = rs.below(2);
      const std::size_t cout = 1 + rs.below(2);
      s.name = "rand-conv";
      s.input_shape = {c, hw, hw};
      s.layers.push_back(LayerSpec::conv2d(c, cout, k, 1, pad));
      s.layers.push_back(LayerSpec::relu());
      std::size_t side = hw + 2 * pad - k + 1;
      if (side % 2 == 0 && rs.below(2) == 0) {
        s.layers.push_back(LayerSpec::maxpool2d(2));
        side /= 2;
      }
      s.layers.push_back(LayerSpec::flatten());
      s.layers.push_back(LayerSpec::dense(cout * side * side, classes));
    }
    if (param_count(s) <= 200) return s;
  }
}

CheckResult check_gradients(CheckDepth depth) {
  const std::size_t nets = depth == CheckDepth::full ? 100 : 20;
  RandomStream rs(SeededRng{2024, 2});
  double worst = 0.0;
  std::size_t masked_nets = 0, conv_nets = 0, max_n = 0;
  for (std::size_t t = 0; t < nets; ++t) {
    const SeededRng rng{2024, 100 + t};
    const ModelSpec spec = random_net(rs);
    conv_nets += spec.name == "rand-conv";
    max_n = std::max(max_n, param_count(spec));
    ModelParams params = init_params(spec, rng.derive({1}));
    randomize_biases(params, rng.derive({2}));
    const Mask start = full_mask(spec);
    std::vector<std::uint8_t> bits(start.bits().begin(), start.bits().end());
    if (t % 2 == 1) {
      // Prune about a quarter of the prunable weights.
      const auto flags = prunable_flags(spec);
      RandomStream drop(rng.derive({3}));
      for (std::size_t j = 0; j < bits.size(); ++j) {
        if (flags[j] && drop.below(4) == 0) bits[j] = 0;
      }
      ++masked_nets;
    }
    const Mask mask(bits);
    const std::size_t batch = 3;
    const Tensor x = gaussian_inputs(spec, batch, rng.derive({4}));
    std::vector<int> y(batch);
    for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<int>(rs.below(num_classes(spec)));

    const TracedForward fw = model_forward_traced(spec, params, mask, x);
    const std::vector<double> g = backward_params(spec, params, mask, fw.trace, cross_entropy_grad(fw.logits, y));

    // Central differences on the effective weights, one coordinate at a time.
    std::vector<double> eff = effective_weights(params, mask);
    const double h = 1e-6;
    double max_diff = 0.0, max_fd = 0.0;
    for (std::size_t j = 0; j < eff.size(); ++j) {
      const double keep = eff[j];
      eff[j] = keep + h;
      const double up = cross_entropy_loss(forward_effective(spec, eff, x), y);
      eff[j] = keep - h;
      const double down = cross_entropy_loss(forward_effective(spec, eff, x), y);
      eff[j] = keep;
      const double fd = (up - down) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(g[j] - fd));
      max_fd = std::max(max_fd, std::abs(fd));
    }
    worst = std::max(worst, max_diff / std::max(max_fd, 1e-12));
  }
  CheckResult r;
  r.pass = worst < tol::kGradientRel;
  r.detail = std::to_string(nets) + " nets (" + std::to_string(conv_nets) + " conv, " + std::to_string(masked_nets) +
             " masked, n<=" + std::to_string(max_n) + "), max relative error " + fmt(worst, 3) + " (limit " +
             fmt(tol::kGradientRel) + ")";
  return r;
}

// ---- 3 ----------------------------------------------------------------------

// ‖Σ̂ − I‖₂ from the materialized perturbations by a dense eigensolver.
double covariance_oracle(const PerturbationSpec& pspec, std::size_t n) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < pspec.k; ++k) {
    const std::vector<double> d = perturbation(pspec, k, n);
    const Eigen::Map<const Eigen::VectorXd> v(d.data(), static_cast<Eigen::Index>(n));
    cov.selfadjointView<Eigen::Lower>().rankUpdate(v);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(pspec.k) * pspec.sigma * pspec.sigma;
  cov -= Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

CheckResult check_estimator_bound(CheckDepth depth) {
  const bool full = depth == CheckDepth::full;
  const std::vector<std::size_t> dims{20, 50, 100};
  const std::vector<std::size_t> ks = full ? std::vector<std::size_t>{100, 1000, 10000}
                                           : std::vector<std::size_t>{100, 1000};
  const std::size_t reps = full ? 11 : 3;
  bool pass = true;
  double worst_agree = 0.0;
  std::string detail;
  for (std::size_t n : dims) {
    double prev = std::numeric_limits<double>::infinity();
    detail += (detail.empty() ? "" : "; ") + std::string("n=") + std::to_string(n) + ":";
    for (std::size_t k : ks) {
      std::vector<double> oracle;
      for (std::size_t rep = 0; rep < reps; ++rep) {
        PerturbationSpec ps;
        ps.rng = SeededRng{3000 + rep, n * 100000 + k};
        ps.k = k;
        const double o = covariance_oracle(ps, n);
        const double lib = covariance_deviation(ps, n);
        worst_agree = std::max(worst_agree, std::abs(lib - o) / o);
        oracle.push_back(o);
      }
      const double med = median(oracle);
      const double bound = tol::kBoundFactor * std::sqrt(static_cast<double>(n) / static_cast<double>(k));
      pass = pass && med <= bound && med < prev;
      prev = med;
      detail += " K=" + std::to_string(k) + " " + fmt(med, 3) + "/" + fmt(bound, 3);
    }
  }
  pass = pass && worst_agree <= tol::kOracleAgreement;
  CheckResult r;
  r.pass = pass;
  r.detail = "median of " + std::to_string(reps) + " (value/bound) " + detail +
             "; power iteration vs eigensolver max rel diff " + fmt(worst_agree, 2);
  return r;
}

// ---- 4 ----------------------------------------------------------------------

CheckResult check_stein_quadratic(CheckDepth) {
  const std::size_t n = 20;
  const SeededRng rng{4, 4};
  // L(w) = ½ wᵀ A w + bᵀ w with A = QᵀQ / n + I.
  const Tensor q = seeded_gaussian(rng.derive({1}), n * n, 1.0);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) acc += q.data()[t * n + i] * q.data()[t * n + j];
      a[i * n + j] = acc / static_cast<double>(n) + (i == j ? 1.0 : 0.0);
    }
  }
  const Tensor b = seeded_gaussian(rng.derive({2}), n, 1.0);
  const Tensor w = seeded_gaussian(rng.derive({3}), n, 1.0);
  const FlatLoss loss = [&](std::span<const double> v) {
    double quad = 0.0, lin = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) row += a[i * n + j] * v[j];
      quad += v[i] * row;
      lin += b.data()[i] * v[i];
    }
    return 0.5 * quad + lin;
  };
  PerturbationSpec ps;
  ps.rng = rng.derive({5});
  ps.sigma = 1e-3;
  ps.k = 50000;
  const std::vector<double> est = stein_estimate(delta_losses(loss, w.data(), ps), ps, n);
  double err = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double g = b.data()[i];
    for (std::size_t j = 0; j < n; ++j) g += a[i * n + j] * w.data()[j];
    err += (est[i] - g) * (est[i] - g);
    norm += g * g;
  }
  const double rel = std::sqrt(err / norm);
  CheckResult r;
  r.pass = rel < tol::kSteinRel;
  r.detail = "n=20, K=50000, sigma=1e-3: relative L2 error " + fmt(rel, 3) + " (limit " + fmt(tol::kSteinRel) +
             ", sqrt((n+1)/K) = " + fmt(std::sqrt(21.0 / 50000.0), 3) + ")";
  return r;
}

// ---- 5 ----------------------------------------------------------------------

CheckResult check_saliency_identity(CheckDepth) {
  struct Case {
    ModelSpec spec;
    double drop;  // fraction of prunable weights already removed
  };
  ModelSpec dense{"sal-mlp", {4}, {LayerSpec::dense(4, 8), LayerSpec::relu(), LayerSpec::dense(8, 8),
                                   LayerSpec::relu(), LayerSpec::dense(8, 3)}};
  ModelSpec conv{"sal-conv", {1, 6, 6}, {LayerSpec::conv2d(1, 3, 3), LayerSpec::relu(), LayerSpec::maxpool2d(2),
                                         LayerSpec::flatten(), LayerSpec::dense(12, 3)}};
  const std::vector<Case> cases{{dense, 0.0}, {dense, 0.3}, {conv, 0.0}, {conv, 0.3}};
  double worst = 0.0;
  std::size_t compared = 0;
  bool pruned_zero = true;
  std::size_t max_n = 0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const ModelSpec& spec = cases[c].spec;
    max_n = std::max(max_n, param_count(spec));
    const SeededRng rng{5, 10 + c};
    ModelParams params = init_params(spec, rng.derive({1}));
    randomize_biases(params, rng.derive({2}));
    const Mask start = full_mask(spec);
    std::vector<std::uint8_t> bits(start.bits().begin(), start.bits().end());
    const auto flags = prunable_flags(spec);
    RandomStream drop(rng.derive({3}));
    for (std::size_t j = 0; j < bits.size(); ++j) {
      if (flags[j] && drop.uniform() < cases[c].drop) bits[j] = 0;
    }
    const Mask mask(bits);
    std::vector<ProbeBatch> probes;
    for (std::size_t p = 0; p < 2; ++p) probes.push_back(synthetic_probe(spec, 4, rng.derive({4, p})));
    const auto noise = perturbation_std(spec, 0.05);
    const std::size_t draws = 2;
    const SeededRng draw_rng = rng.derive({5});
    const SaliencyReport rep = saliency_scores(spec, params, mask, probes, noise, draws, draw_rng);

    // ∂I/∂m_j by central differences on a relaxed mask, ΔW held fixed.
    const auto w = params.flat();
    std::vector<double> relaxed(bits.begin(), bits.end());
    std::vector<double> fd(w.size(), 0.0);
    const double h = 1e-5;
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (!bits[j]) continue;
      std::vector<double> eff(w.size());
      relaxed[j] = 1.0 + h;
      for (std::size_t i = 0; i < w.size(); ++i) eff[i] = w[i] * relaxed[i];
      const double up = saliency_objective(spec, eff, mask, probes, noise, draws, draw_rng);
      relaxed[j] = 1.0 - h;
      for (std::size_t i = 0; i < w.size(); ++i) eff[i] = w[i] * relaxed[i];
      const double down = saliency_objective(spec, eff, mask, probes, noise, draws, draw_rng);
      relaxed[j] = 1.0;
      fd[j] = std::abs((up - down) / (2.0 * h));
    }
    const double scale = *std::max_element(fd.begin(), fd.end());
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (!bits[j]) {
        pruned_zero = pruned_zero && rep.scores[j] == 0.0;
        continue;
      }
      worst = std::max(worst, std::abs(rep.scores[j] - fd[j]) / std::max(fd[j], 1e-6 * scale));
      ++compared;
    }
  }
  CheckResult r;
  r.pass = worst < tol::kSaliencyRel && pruned_zero;
  r.detail = std::to_string(cases.size()) + " nets (n<=" + std::to_string(max_n) + "), " + std::to_string(compared) +
             " scores vs mask-side differences: max relative error " + fmt(worst, 3) + " (limit " +
             fmt(tol::kSaliencyRel) + ")" + (pruned_zero ? "" : "; nonzero score at a pruned weight");
  return r;
}

// ---- 6 ----------------------------------------------------------------------

CheckResult check_density_schedule(CheckDepth depth) {
  const bool full = depth == CheckDepth::full;
  const ModelSpec spec = lenet5({3, 32, 32}, 10);
  const ModelParams params = init_params(spec, SeededRng{6, 1});
  PruningConfig pc;
  pc.mode = PruneMode::data_free;
  pc.rounds = full ? 50 : 10;
  pc.density = 0.2;
  if (!full) pc.probe_batch = 8;
  const auto flags = prunable_flags(spec);
  const std::size_t n_prunable = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));

  Mask prev = full_mask(spec);
  bool monotone = true, schedule = true;
  const auto observer = [&](const PruningRoundLog& log, const Mask& m) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (m.test(j) && !prev.test(j)) monotone = false;
    }
    const double target = std::pow(pc.density, static_cast<double>(log.round) / static_cast<double>(pc.rounds)) *
                          static_cast<double>(n_prunable);
    if (std::abs(static_cast<double>(log.kept) - target) > 1.0) schedule = false;
    prev = m;
  };
  std::string collapse;
  PruningResult res;
  try {
    res = run_foresight_pruning(pc, spec, params, DatasetHandle{}, {}, SeededRng{6, 4}, observer);
  } catch (const LayerCollapse& e) {
    collapse = e.what();
  }
  CheckResult r;
  if (!collapse.empty()) {
    r.detail = "layer collapse: " + collapse;
    return r;
  }
  std::size_t kept = 0;
  std::string per_layer;
  bool alive = true;
  for (const auto& seg : param_layout(spec)) {
    if (!seg.prunable) continue;
    std::size_t c = 0;
    for (std::size_t j = seg.offset; j < seg.offset + seg.length; ++j) c += res.mask.test(j);
    kept += c;
    alive = alive && c > 0;
    per_layer += (per_layer.empty() ? "" : " ") + std::to_string(c) + "/" + std::to_string(seg.length);
  }
  const double target = pc.density * static_cast<double>(n_prunable);
  const bool final_ok = std::abs(static_cast<double>(kept) - target) <= 1.0;
  r.pass = final_ok && monotone && schedule && alive;
  r.detail = "LeNet-5, T_p=" + std::to_string(pc.rounds) + ": kept " + std::to_string(kept) + " of " +
             std::to_string(n_prunable) + " prunable (target " + fmt(target, 8) + ", density " +
             fmt(prunable_density(spec, res.mask), 6) + "), per layer " + per_layer +
             (monotone ? ", monotone" : ", NOT monotone") + (schedule ? "" : ", schedule off by >1");
  return r;
}

// ---- 7 ----------------------------------------------------------------------

CheckResult check_flntk_bound(CheckDepth depth) {
  const std::size_t instances = depth == CheckDepth::full ? 50 : 10;
  RandomStream rs(SeededRng{7, 7});
  std::size_t held = 0;
  double worst_ratio = 0.0, worst_trace = 0.0;
  std::size_t max_n = 0, max_samples = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t in = 2 + rs.below(5);
    const std::size_t hidden = 3 + rs.below(10);
    const std::size_t out = 2 + rs.below(2);
    const ModelSpec spec{"flntk", {in}, {LayerSpec::dense(in, hidden), LayerSpec::relu(), LayerSpec::dense(hidden, out)}};
    max_n = std::max(max_n, param_count(spec));
    const SeededRng rng{7, 1000 + t};
    ModelParams params = init_params(spec, rng.derive({1}));
    randomize_biases(params, rng.derive({2}));
    const std::size_t devices = 1 + rs.below(3);
    std::vector<Tensor> batches;
    std::size_t total = 0;
    for (std::size_t i = 0; i < devices; ++i) {
      const std::size_t cap = (64 - total) - (devices - 1 - i);  // leave one sample per later device
      const std::size_t ni = 1 + rs.below(std::min<std::size_t>(cap, 24));
      total += ni;
      batches.push_back(gaussian_inputs(spec, ni, rng.derive({3, i}), 0.5 * static_cast<double>(i)));
    }
    max_samples = std::max(max_samples, total);
    const FlNtkBound b = flntk_oracle(spec, params, batches);
    if (b.fl_nuclear <= b.local_sum * (1.0 + 1e-12)) ++held;
    worst_ratio = std::max(worst_ratio, b.fl_nuclear / b.local_sum);
    for (std::size_t i = 0; i < devices; ++i) {
      const double tr = local_ntk_trace(spec, params, batches[i], i).trace_norm;
      worst_trace = std::max(worst_trace, std::abs(tr - b.local[i]) / b.local[i]);
    }
  }
  CheckResult r;
  r.pass = held == instances && worst_trace <= tol::kOracleAgreement;
  r.detail = std::to_string(held) + "/" + std::to_string(instances) + " instances satisfy the bound (n<=" +
             std::to_string(max_n) + ", N<=" + std::to_string(max_samples) + "), max ratio " + fmt(worst_ratio, 4) +
             "; SVD vs reverse-sweep local trace max rel diff " + fmt(worst_trace, 2);
  return r;
}

// ---- 8 ----------------------------------------------------------------------

// Spread (max − min) of the per-device values.
double dispersion(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

// Per-sample trace over `x`, in chunks that respect the explicit-Jacobian
// size guard; the trace is additive over samples.
double per_sample_trace(const ModelSpec& spec, const ModelParams& params, const Tensor& x) {
  const std::size_t rows = x.extent(0), chunk = std::max<std::size_t>(1, kNtkSizeGuard / params.size());
  double total = 0.0;
  for (std::size_t b = 0; b < rows; b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(rows, b + chunk); ++i) idx.push_back(i);
    total += local_ntk_trace(spec, params, gather_rows(x, idx)).trace_norm;
  }
  return total / static_cast<double>(rows);
}

// Same size at every depth: with fewer seeds the median rides on a few
// one-sample devices.
CheckResult check_data_free_resilience(CheckDepth) {
  const std::size_t seeds = 10;
  // Probe size as in pruning (PruningConfig::probe_batch), capped by N_i.
  const std::size_t devices = 10, probe = PruningConfig{}.probe_batch;
  std::vector<double> gauss, real;
  for (std::size_t s = 1; s <= seeds; ++s) {
    const SeededRng root{800 + s, 0};
    const DatasetSplit data = gen_synthetic(SyntheticSpec{}, root.derive({1}));
    const ModelSpec spec = mlp(data.train.sample_shape(), {32}, data.train.classes);
    const ModelParams params = init_params(spec, root.derive({2}));
    const auto parts = dirichlet_partition(data.train.labels, data.train.classes, devices, 0.1, root.derive({3}));
    std::vector<double> g, rl;
    for (const auto& p : parts) {
      const std::size_t b = std::min(probe, p.size());
      std::vector<std::size_t> rows;
      for (std::size_t i : sample_without_replacement(p.size(), b, root.derive({4, p.device_id}))) {
        rows.push_back(p.indices[i]);
      }
      rl.push_back(per_sample_trace(spec, params, gather_rows(data.train.inputs, rows)));
      g.push_back(per_sample_trace(spec, params, synthetic_probe(spec, b, root.derive({5, p.device_id})).inputs));
    }
    gauss.push_back(dispersion(g));
    real.push_back(dispersion(rl));
  }
  const double mg = median(gauss), mr = median(real);
  CheckResult r;
  r.pass = mg <= mr;
  r.detail = "spread (max-min) of per-sample local NTK trace norm over " + std::to_string(devices) +
             " devices (beta=0.1, probe min(" + std::to_string(probe) + ", N_i)), median of " + std::to_string(seeds) + " seeds: gaussian " + fmt(mg, 3) +
             " vs real " + fmt(mr, 3) + " [gaussian " + join(gauss) + "; real " + join(real) + "]";
  return r;
}

// ---- 9 ----------------------------------------------------------------------

struct StopRun {};

CheckResult check_synergy(CheckDepth depth) {
  CheckResult r;
  if (depth != CheckDepth::full) {
    r.skipped = true;
    r.pass = true;
    r.detail = "runs only at full depth (5 seeds x 400 rounds)";
    return r;
  }
  std::vector<double> pruned50, pruned200, dense_eq;
  std::size_t diverged = 0;
  std::string rounds_used;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig c;  // synthetic 10 classes, dims 32, mlp-128-128, m=20, beta=0.1, G_t=4, T_t=400
    c.seed = seed;
    c.K = 50;
    c.d = 0.2;
    const DatasetSplit data = load_dataset(c);
    const ExperimentResult p = run_experiment(c, data);
    pruned50.push_back(p.metrics.back().accuracy);
    const double budget = p.metrics.back().flops_cum;

    // Dense BP-free, read off at the first round whose cumulative FLOPs
    // reach the pruned run's total.
    ExperimentConfig dc = c;
    dc.d = 1.0;
    RoundMetrics last;
    try {
      run_experiment(dc, data, std::nullopt, [&](const RoundMetrics& m) {
        last = m;
        if (m.flops_cum >= budget) throw StopRun{};
      });
    } catch (const StopRun&) {
    } catch (const NumericError&) {
      ++diverged;
    }
    dense_eq.push_back(last.accuracy);
    rounds_used += (rounds_used.empty() ? "" : " ") + std::to_string(last.round);

    ExperimentConfig kc = c;
    kc.K = 200;
    pruned200.push_back(run_experiment(kc, data).metrics.back().accuracy);
  }
  const double a_p = median(pruned50), a_d = median(dense_eq), a_k = median(pruned200);
  r.pass = a_p >= a_d && a_k >= a_p;
  r.detail = "(a) pruned d=0.2 " + fmt(a_p, 3) + " vs dense at equal FLOPs " + fmt(a_d, 3) + " (dense rounds " +
             rounds_used + (diverged ? ", " + std::to_string(diverged) + " diverged" : "") + "); (b) K=200 " +
             fmt(a_k, 3) + " vs K=50 " + fmt(a_p, 3) + " [pruned " + join(pruned50) + "; dense " + join(dense_eq) +
             "; K=200 " + join(pruned200) + "]";
  return r;
}

// ---- 10 ---------------------------------------------------------------------

CheckResult check_comm_accounting(CheckDepth depth) {
  const bool full = depth == CheckDepth::full;
  ExperimentConfig c;
  c.seed = 10;
  c.prune_mode = PruneMode::data_free;
  c.T_t = full ? 100 : 10;
  if (!full) {
    c.model = "mlp-32";
    c.T_p = 5;
    c.probe_batch = 32;
  }
  const DatasetSplit data = load_dataset(c);
  TempDir dir("comm");
  const RunFiles files{dir.path / "metrics.csv", dir.path / "final.ckpt"};
  const ExperimentResult res = run_experiment_to_files(c, data, std::nullopt, files);
  const auto rows = read_metrics_csv(files.metrics);
  const std::size_t n = res.state.params.size();
  const std::size_t kept = res.state.mask.count();
  const auto flags = prunable_flags(res.spec);
  const std::size_t n_prunable = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
  const std::uint64_t want_up = c.G_t * (32 * c.K + 64);
  const std::uint64_t want_down = c.G_t * 32 * kept;
  std::size_t prune_rows = 0, train_rows = 0, bad = 0;
  std::uint64_t prune_up = 0;
  for (const auto& m : rows) {
    if (m.phase == "prune") {
      ++prune_rows;
      prune_up += m.up_bits;
    } else {
      ++train_rows;
      bad += m.up_bits != want_up || m.down_bits != want_down;
    }
  }
  const CostLedger ledger = replay_ledger(files.metrics);
  const bool kept_ok = kept == static_cast<std::size_t>(std::llround(c.d * static_cast<double>(n_prunable))) +
                                   (n - n_prunable);
  CheckResult r;
  r.pass = prune_up == 0 && bad == 0 && prune_rows == c.T_p && train_rows == c.T_t && kept_ok &&
           ledger.rounds == rows.size();
  r.detail = std::to_string(prune_rows) + " pruning rounds uploading " + std::to_string(prune_up) + " bits; " +
             std::to_string(train_rows) + " training rounds, " + std::to_string(bad) +
             " off-contract; per device-round up " + std::to_string(want_up / c.G_t) + " = 32K+64, down " +
             std::to_string(want_down / c.G_t) + " = 32 d n with d n = " + std::to_string(kept) + " of n = " +
             std::to_string(n) + " (biases always kept)";
  return r;
}

// ---- 11 ---------------------------------------------------------------------

CheckResult check_memory_model(CheckDepth) {
  const ModelSpec spec = lenet5({3, 32, 32}, 10);
  const std::size_t n = param_count(spec);
  const double bp = peak_memory_model(spec, 32, MemoryMode::backprop, 1.0);
  const double zo = peak_memory_model(spec, 32, MemoryMode::bp_free, 0.2);
  const double zo_dense = peak_memory_model(spec, 32, MemoryMode::bp_free, 1.0);
  const MemoryBreakdown sparse = peak_memory_breakdown(spec, 32, MemoryMode::bp_free, 0.2);
  const MemoryBreakdown dense = peak_memory_breakdown(spec, 32, MemoryMode::bp_free, 1.0);
  const double ratio = zo / bp;
  const bool exact = sparse.params == 0.2 * dense.params && dense.params == 4.0 * static_cast<double>(n);
  CheckResult r;
  r.pass = ratio <= tol::kMemoryRatio && exact && n == 62006;
  r.detail = "LeNet-5 (n=" + std::to_string(n) + ") batch 32: bp-free d=0.2 " + fmt(zo / 1e6, 4) + " MB vs backprop " +
             fmt(bp / 1e6, 4) + " MB, ratio " + fmt(ratio, 4) + " (limit " + fmt(tol::kMemoryRatio) +
             "; d=1 ratio " + fmt(zo_dense / bp, 4) + "); parameter term " + fmt(sparse.params, 10) + " = 0.2 x " +
             fmt(dense.params, 10) + (exact ? "" : " MISMATCH");
  return r;
}

// ---- 12 ---------------------------------------------------------------------

void set_threads(const char* v) {
  if (v) {
    ::setenv("FEDZO_THREADS", v, 1);
  } else {
    ::unsetenv("FEDZO_THREADS");
  }
}

CheckResult check_determinism(CheckDepth depth) {
  const bool full = depth == CheckDepth::full;
  ExperimentConfig c = full ? ExperimentConfig{} : small_config(12);
  c.seed = 12;
  c.T_p = full ? 20 : 5;
  c.T_t = full ? 40 : 8;
  c.difference = Difference::central;
  const DatasetSplit data = load_dataset(c);
  TempDir dir("determinism");
  std::string saved;
  if (const char* env = std::getenv("FEDZO_THREADS")) saved = env;
  std::vector<std::vector<std::uint8_t>> csv, ckpt;
  const char* threads[] = {"1", "3"};
  for (int run = 0; run < 2; ++run) {
    set_threads(threads[run]);
    const RunFiles files{dir.path / ("m" + std::to_string(run) + ".csv"), dir.path / ("c" + std::to_string(run))};
    try {
      run_experiment_to_files(c, data, std::nullopt, files);
    } catch (...) {
      set_threads(saved.empty() ? nullptr : saved.c_str());
      throw;
    }
    csv.push_back(read_file(files.metrics));
    ckpt.push_back(read_file(files.checkpoint));
  }
  set_threads(saved.empty() ? nullptr : saved.c_str());
  CheckResult r;
  r.pass = csv[0] == csv[1] && ckpt[0] == ckpt[1];
  r.detail = "two runs (1 and 3 worker threads), " + std::to_string(c.T_p) + "+" + std::to_string(c.T_t) +
             " rounds: metrics " + std::to_string(csv[0].size()) + " bytes " +
             (csv[0] == csv[1] ? "identical" : "DIFFER") + ", checkpoint " + std::to_string(ckpt[0].size()) +
             " bytes " + (ckpt[0] == ckpt[1] ? "identical" : "DIFFER");
  return r;
}

using CheckFn = CheckResult (*)(CheckDepth);

struct Entry {
  CheckInfo info;
  CheckFn fn;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e{
      {{1, "seed-trick-exactness"}, check_seed_trick},
      {{2, "gradient-correctness"}, check_gradients},
      {{3, "estimator-error-bound"}, check_estimator_bound},
      {{4, "stein-quadratic"}, check_stein_quadratic},
      {{5, "saliency-identity"}, check_saliency_identity},
      {{6, "density-schedule"}, check_density_schedule},
      {{7, "flntk-bound"}, check_flntk_bound},
      {{8, "data-free-resilience"}, check_data_free_resilience},
      {{9, "directional-synergy"}, check_synergy},
      {{10, "comm-accounting"}, check_comm_accounting},
      {{11, "memory-model"}, check_memory_model},
      {{12, "determinism"}, check_determinism},
  };
  return e;
}

}  // namespace

const std::vector<CheckInfo>& check_catalog() {
  static const std::vector<CheckInfo> c = [] {
    std::vector<CheckInfo> v;
    for (const auto& e : entries()) v.push_back(e.info);
    return v;
  }();
  return c;
}

CheckResult run_check(int id, CheckDepth depth) {
  for (const auto& e : entries()) {
    if (e.info.id != id) continue;
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = e.fn(depth);
    } catch (const std::exception& ex) {
      r = CheckResult{};
      r.detail = std::string("threw: ") + ex.what();
    }
    r.id = id;
    r.name = e.info.name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }
  throw ValidationError("unknown check id " + std::to_string(id));
}

std::vector<CheckResult> run_checks(CheckDepth depth, const std::vector<int>& ids,
                                    const std::function<void(const CheckResult&)>& on_result) {
  std::vector<int> todo = ids;
  if (todo.empty()) {
    for (const auto& e : entries()) todo.push_back(e.info.id);
  }
  std::vector<CheckResult> out;
  for (int id : todo) {
    out.push_back(run_check(id, depth));
    if (on_result) on_result(out.back());
  }
  return out;
}

std::string format_check(const CheckResult& r) {
  const char* verdict = r.skipped ? "SKIP" : (r.pass ? "PASS" : "FAIL");
  std::ostringstream os;
  os << verdict << " [" << r.id << "] " << r.name << ": " << r.detail << " (" << fmt(r.seconds, 3) << " s)";
  return os.str();
}

}  // namespace fedzo
